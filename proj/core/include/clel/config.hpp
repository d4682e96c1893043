#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "clel/common.hpp"

namespace clel {

/// Flat `key = value` configuration with dotted namespaces. Every key must
/// be registered; `#` starts a comment.
class Config {
 public:
  /// All registered keys at their default values.
  static Config defaults();

  void set(const std::string& key, const std::string& value);
  /// Applies "key=value".
  void apply_override(const std::string& assignment);
  void merge_text(const std::string& text, const std::string& origin = "<text>");
  void merge_file(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& str(const std::string& key) const;
  double real(const std::string& key) const;
  long long integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<int> int_list(const std::string& key) const;

  /// Sorted `key = value` lines; parsing it back yields an equal Config.
  std::string snapshot() const;
  std::uint64_t hash() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

std::string format_real(double v);

}  // namespace clel
