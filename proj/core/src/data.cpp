#include "clel/data.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "clel/config.hpp"

namespace clel {

DatasetId parse_dataset_id(const std::string& s) {
  if (s == "gauss8") return DatasetId::gauss8;
  if (s == "two_rings") return DatasetId::two_rings;
  if (s == "moons") return DatasetId::moons;
  if (s == "checkerboard") return DatasetId::checkerboard;
  if (s == "image_dir") return DatasetId::image_dir;
  throw ConfigError("unknown dataset id '" + s + "'");
}

std::string to_string(DatasetId id) {
  switch (id) {
    case DatasetId::gauss8:
      return "gauss8";
    case DatasetId::two_rings:
      return "two_rings";
    case DatasetId::moons:
      return "moons";
    case DatasetId::checkerboard:
      return "checkerboard";
    case DatasetId::image_dir:
      return "image_dir";
  }
  return "gauss8";
}

OodKind parse_ood_kind(const std::string& s) {
  if (s == "uniform") return OodKind::uniform;
  if (s == "scaled") return OodKind::scaled;
  throw ConfigError("unknown OOD kind '" + s + "'");
}

DatasetSpec dataset_spec(const std::string& id, OodKind ood, const std::filesystem::path& image_dir) {
  DatasetSpec s;
  s.id = parse_dataset_id(id);
  s.ood = ood;
  switch (s.id) {
    case DatasetId::gauss8:
      s.clamp_lo = -4.0;
      s.clamp_hi = 4.0;
      break;
    case DatasetId::two_rings:
      s.data_scale = 2.0;
      break;
    case DatasetId::moons:
      s.data_scale = 1.5;
      break;
    case DatasetId::checkerboard:
      s.data_scale = 3.0;
      break;
    case DatasetId::image_dir: {
      if (image_dir.empty()) throw ConfigError("image_dir dataset needs dataset.image_dir");
      auto images = std::make_shared<ImageSet>(load_images(image_dir));
      s.shape = images->shape;
      s.images = std::move(images);
      s.clamp_lo = -1.0;
      s.clamp_hi = 1.0;
      s.data_scale = 1.0;
      break;
    }
  }
  return s;
}

Rng training_stream(std::uint64_t seed) { return Rng(seed, 1); }
Rng heldout_stream(std::uint64_t seed) { return Rng(seed, 2); }

namespace {

bool inside(const DatasetSpec& s, double a, double b) {
  return a >= s.clamp_lo && a <= s.clamp_hi && b >= s.clamp_lo && b <= s.clamp_hi;
}

void draw_point(const DatasetSpec& s, Rng& rng, double& a, double& b) {
  constexpr double pi = std::numbers::pi;
  switch (s.id) {
    case DatasetId::gauss8: {
      const double angle = 2.0 * pi * static_cast<double>(rng.index(8)) / 8.0;
      a = s.mode_radius * std::cos(angle) + s.mode_sigma * rng.gaussian();
      b = s.mode_radius * std::sin(angle) + s.mode_sigma * rng.gaussian();
      return;
    }
    case DatasetId::two_rings: {
      const double radius = (rng.bernoulli(0.5) ? 1.0 : 2.0) + s.ring_sigma * rng.gaussian();
      const double angle = rng.uniform(0.0, 2.0 * pi);
      a = radius * std::cos(angle);
      b = radius * std::sin(angle);
      return;
    }
    case DatasetId::moons: {
      const double t = rng.uniform(0.0, pi);
      if (rng.bernoulli(0.5)) {
        a = std::cos(t);
        b = std::sin(t);
      } else {
        a = 1.0 - std::cos(t);
        b = 0.5 - std::sin(t);
      }
      a = 1.5 * (a - 0.5 + 0.05 * rng.gaussian());
      b = 1.5 * (b - 0.25 + 0.05 * rng.gaussian());
      return;
    }
    case DatasetId::checkerboard: {
      const double x1 = rng.uniform(-2.0, 2.0);
      const double x2 = rng.uniform() - 2.0 * static_cast<double>(rng.index(2)) +
                        std::fmod(std::floor(x1) + 4.0, 2.0);
      a = 1.5 * x1;
      b = 1.5 * x2;
      return;
    }
    case DatasetId::image_dir:
      break;
  }
}

}  // namespace

Matrix epoch_batch(const DatasetSpec& spec, std::uint64_t seed, long iteration, int batch_size) {
  if (!spec.images || spec.images->images.rows() == 0) throw DataError("no images loaded");
  if (iteration < 0 || batch_size < 1) throw ArgumentError("epoch_batch needs iteration >= 0 and batch_size >= 1");
  const long n = static_cast<long>(spec.images->images.rows());
  Matrix out(batch_size, spec.dim());
  long cached_epoch = -1;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (int i = 0; i < batch_size; ++i) {
    const long global = iteration * batch_size + i;
    const long epoch = global / n;
    if (epoch != cached_epoch) {
      std::iota(order.begin(), order.end(), Eigen::Index{0});
      Rng rng(seed, 0x1000 + static_cast<std::uint64_t>(epoch));
      for (std::size_t k = order.size() - 1; k > 0; --k) std::swap(order[k], order[rng.index(k + 1)]);
      cached_epoch = epoch;
    }
    out.row(i) = spec.images->images.row(order[static_cast<std::size_t>(global % n)]);
  }
  return out;
}

Matrix generate(const DatasetSpec& spec, Eigen::Index n, Rng& rng) {
  if (n < 1) throw ArgumentError("generate needs n >= 1");
  if (spec.id == DatasetId::image_dir) {
    if (!spec.images || spec.images->images.rows() == 0) throw DataError("no images loaded");
    Matrix out(n, spec.dim());
    const auto count = static_cast<std::size_t>(spec.images->images.rows());
    for (Eigen::Index i = 0; i < n; ++i) {
      out.row(i) = spec.images->images.row(static_cast<Eigen::Index>(rng.index(count)));
    }
    return out;
  }
  Matrix out(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    double a = 0, b = 0;
    do {
      draw_point(spec, rng, a, b);
    } while (!inside(spec, a, b));
    out(i, 0) = a;
    out(i, 1) = b;
  }
  return out;
}

Matrix ood_counterpart(const DatasetSpec& spec, Eigen::Index n, Rng& rng) {
  if (n < 1) throw ArgumentError("ood_counterpart needs n >= 1");
  if (spec.ood == OodKind::uniform) {
    Matrix out(n, spec.dim());
    for (Eigen::Index i = 0; i < out.size(); ++i) {
      out.data()[i] = rng.uniform(spec.clamp_lo, spec.clamp_hi);
    }
    return out;
  }
  if (spec.id == DatasetId::image_dir) throw ConfigError("scaled OOD is defined for 2D data only");
  Matrix out(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    double a = 0, b = 0;
    do {
      draw_point(spec, rng, a, b);
      a *= 1.5;
      b *= 1.5;
    } while (!inside(spec, a, b));
    out(i, 0) = a;
    out(i, 1) = b;
  }
  return out;
}

Matrix mode_centers(const DatasetSpec& spec) {
  if (spec.id != DatasetId::gauss8) return Matrix(0, spec.dim());
  Matrix c(8, 2);
  for (int k = 0; k < 8; ++k) {
    const double angle = 2.0 * std::numbers::pi * k / 8.0;
    c(k, 0) = spec.mode_radius * std::cos(angle);
    c(k, 1) = spec.mode_radius * std::sin(angle);
  }
  return c;
}

std::vector<int> nearest_mode(const Matrix& centers, const Matrix& x) {
  if (centers.rows() == 0) throw ArgumentError("nearest_mode needs at least one center");
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    (centers.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

namespace {

// Reads one whitespace-delimited PGM header token, skipping comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  while (in) {
    const int c = in.peek();
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  in >> tok;
  return tok;
}

}  // namespace

ImageSet load_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
  }
  if (files.empty()) throw DataError("no .pgm images in " + dir.string());
  std::sort(files.begin(), files.end());

  ImageSet set;
  for (std::size_t k = 0; k < files.size(); ++k) {
    std::ifstream in(files[k], std::ios::binary);
    if (!in) throw DataError("cannot read " + files[k].string());
    int w = 0, h = 0, maxval = 0;
    try {
      if (pgm_token(in) != "P5") throw DataError("not a binary PGM: " + files[k].string());
      w = std::stoi(pgm_token(in));
      h = std::stoi(pgm_token(in));
      maxval = std::stoi(pgm_token(in));
    } catch (const std::logic_error&) {
      throw DataError("malformed PGM header: " + files[k].string());
    }
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
      throw DataError("unsupported PGM geometry in " + files[k].string());
    }
    in.get();
    if (k == 0) {
      set.shape = {1, h, w};
      set.images.resize(static_cast<Eigen::Index>(files.size()), h * w);
    } else if (h != set.shape.height || w != set.shape.width) {
      throw DataError("image size mismatch in " + files[k].string());
    }
    std::vector<unsigned char> px(static_cast<std::size_t>(w * h));
    in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (in.gcount() != static_cast<std::streamsize>(px.size())) {
      throw DataError("truncated pixel data in " + files[k].string());
    }
    for (int i = 0; i < w * h; ++i) {
      set.images(static_cast<Eigen::Index>(k), i) = 2.0 * px[static_cast<std::size_t>(i)] / maxval - 1.0;
    }
    set.files.push_back(files[k].filename().string());
  }
  return set;
}

void save_pgm(const std::filesystem::path& path, const Eigen::Ref<const Eigen::RowVectorXd>& image,
              InputShape shape) {
  if (image.size() != shape.height * shape.width) throw ArgumentError("image size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << shape.width << " " << shape.height << "\n255\n";
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    const double v = std::clamp((image(i) + 1.0) * 0.5 * 255.0, 0.0, 255.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v))));
  }
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Matrix& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << "\n";
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) out << (j ? "," : "") << format_real(rows(i, j));
    out << "\n";
  }
}

Matrix read_csv(const std::filesystem::path& path, std::vector<std::string>* header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV " + path.string());
  std::vector<std::string> names;
  {
    std::istringstream is(line);
    std::string cell;
    while (std::getline(is, cell, ',')) names.push_back(cell);
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> r;
    std::istringstream is(line);
    std::string cell;
    while (std::getline(is, cell, ',')) {
      try {
        r.push_back(std::stod(cell));
      } catch (const std::logic_error&) {
        throw DataError("non-numeric CSV cell '" + cell + "' in " + path.string());
      }
    }
    if (r.size() != names.size()) throw DataError("ragged CSV row in " + path.string());
    rows.push_back(std::move(r));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < names.size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  if (header) *header = std::move(names);
  return m;
}

}  // namespace clel
