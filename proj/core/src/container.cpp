#include "clel/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace clel {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

std::filesystem::path with_suffix(const std::filesystem::path& base, const std::string& suffix) {
  return std::filesystem::path(base.string() + suffix);
}

void ArrayContainer::add(const std::string& name, const Matrix& values) {
  if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
    throw ArgumentError("array name must be non-empty without whitespace: '" + name + "'");
  }
  if (!arrays_.count(name)) order_.push_back(name);
  arrays_[name] = values;
}

Matrix ArrayContainer::get(const std::string& name) const {
  auto it = arrays_.find(name);
  if (it == arrays_.end()) throw DataError("container has no array '" + name + "'");
  return it->second;
}

std::vector<std::string> ArrayContainer::names() const { return order_; }

void ArrayContainer::set_meta(const std::string& key, const std::string& value) {
  if (key.empty() || key.find_first_of(" \t\n") != std::string::npos) {
    throw ArgumentError("meta key must be non-empty without whitespace");
  }
  if (value.find('\n') != std::string::npos) throw ArgumentError("meta value spans lines");
  meta_[key] = value;
}

std::optional<std::string> ArrayContainer::meta(const std::string& key) const {
  auto it = meta_.find(key);
  if (it == meta_.end()) return std::nullopt;
  return it->second;
}

bool ArrayContainer::exists(const std::filesystem::path& base) {
  return std::filesystem::exists(with_suffix(base, ".manifest")) &&
         std::filesystem::exists(with_suffix(base, ".bin"));
}

void ArrayContainer::save(const std::filesystem::path& base, DType dtype) const {
  std::ofstream manifest(with_suffix(base, ".manifest"));
  std::ofstream bin(with_suffix(base, ".bin"), std::ios::binary);
  if (!manifest || !bin) throw DataError("cannot write container " + base.string());
  manifest << "clel-container 1\n";
  manifest << "dtype " << (dtype == DType::f32 ? "f32" : "f64") << "\n";
  for (const auto& [k, v] : meta_) manifest << "meta " << k << " " << v << "\n";
  std::int64_t offset = 0;
  for (const std::string& name : order_) {
    const Matrix& m = arrays_.at(name);
    manifest << "array " << name << " " << offset << " 2 " << m.rows() << " " << m.cols() << "\n";
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if (dtype == DType::f32) {
        const float f = static_cast<float>(m.data()[i]);
        bin.write(reinterpret_cast<const char*>(&f), sizeof f);
      } else {
        const double d = m.data()[i];
        bin.write(reinterpret_cast<const char*>(&d), sizeof d);
      }
    }
    offset += m.size();
  }
  if (!manifest || !bin) throw DataError("short write on container " + base.string());
}

ArrayContainer ArrayContainer::load(const std::filesystem::path& base) {
  std::ifstream manifest(with_suffix(base, ".manifest"));
  if (!manifest) throw DataError("cannot read " + with_suffix(base, ".manifest").string());
  std::ifstream bin(with_suffix(base, ".bin"), std::ios::binary);
  if (!bin) throw DataError("cannot read " + with_suffix(base, ".bin").string());
  const std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  ArrayContainer c;
  std::string line;
  std::getline(manifest, line);
  if (line != "clel-container 1") throw DataError("bad container header in " + base.string());
  DType dtype = DType::f64;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string kind;
    is >> kind;
    if (kind == "dtype") {
      std::string d;
      is >> d;
      if (d == "f32") {
        dtype = DType::f32;
      } else if (d == "f64") {
        dtype = DType::f64;
      } else {
        throw DataError("unknown dtype '" + d + "'");
      }
    } else if (kind == "meta") {
      std::string key;
      is >> key;
      std::string value;
      std::getline(is >> std::ws, value);
      c.meta_[key] = value;
    } else if (kind == "array") {
      std::string name;
      std::int64_t offset = 0, rank = 0;
      is >> name >> offset >> rank;
      std::vector<std::int64_t> dims(static_cast<std::size_t>(rank));
      for (auto& d : dims) is >> d;
      if (!is || rank < 1 || rank > 2) throw DataError("malformed array record: " + line);
      const std::int64_t rows = dims[0];
      const std::int64_t cols = rank == 2 ? dims[1] : 1;
      const std::size_t width = dtype == DType::f32 ? 4 : 8;
      const std::size_t begin = static_cast<std::size_t>(offset) * width;
      const std::size_t count = static_cast<std::size_t>(rows * cols);
      if (begin + count * width > blob.size()) throw DataError("array '" + name + "' overruns data");
      Matrix m(rows, cols);
      for (std::size_t i = 0; i < count; ++i) {
        if (dtype == DType::f32) {
          float f;
          std::memcpy(&f, blob.data() + begin + i * width, width);
          m.data()[i] = f;
        } else {
          double d;
          std::memcpy(&d, blob.data() + begin + i * width, width);
          m.data()[i] = d;
        }
      }
      c.add(name, m);
    } else {
      throw DataError("unknown manifest record: " + line);
    }
  }
  return c;
}

}  // namespace clel
