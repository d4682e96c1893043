#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clel/common.hpp"

namespace clel {

enum class DType { f32, f64 };

/// Named-array container stored as two files:
///
///   <base>.manifest   text, one record per line:
///       clel-container 1
///       dtype f32|f64
///       meta <key> <value...>
///       array <name> <offset> <rank> <dim0> <dim1> ...
///   <base>.bin        the arrays' values, row-major, little-endian,
///                     concatenated; <offset> counts elements, not bytes.
///
/// f64 containers round-trip bit-exactly; f32 containers round-trip
/// bit-exactly for values already representable in binary32.
class ArrayContainer {
 public:
  void add(const std::string& name, const Matrix& values);
  Matrix get(const std::string& name) const;
  bool contains(const std::string& name) const { return arrays_.count(name) > 0; }
  std::vector<std::string> names() const;

  void set_meta(const std::string& key, const std::string& value);
  std::optional<std::string> meta(const std::string& key) const;

  void save(const std::filesystem::path& base, DType dtype) const;
  static ArrayContainer load(const std::filesystem::path& base);

  static bool exists(const std::filesystem::path& base);

 private:
  std::map<std::string, Matrix> arrays_;
  std::vector<std::string> order_;
  std::map<std::string, std::string> meta_;
};

std::filesystem::path with_suffix(const std::filesystem::path& base, const std::string& suffix);

}  // namespace clel
