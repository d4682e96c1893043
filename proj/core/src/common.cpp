#include "clel/common.hpp"

#include <sstream>

namespace clel {

UnitLatent UnitLatent::normalize(const Vector& v) {
  const double n = v.norm();
  if (!(n > kDegenerateNorm)) {
    throw DegenerateFeature("cannot normalize a vector with norm " + std::to_string(n));
  }
  return UnitLatent(v / n);
}

UnitLatent UnitLatent::from_unit(Vector v) {
  if (std::abs(v.norm() - 1.0) > kTolerance) {
    throw ArgumentError("latent is not unit norm (norm " + std::to_string(v.norm()) + ")");
  }
  return UnitLatent(std::move(v));
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x9e3779b9u};
  engine_.seed(seq);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw ArgumentError("Rng::index on empty range");
  std::uniform_int_distribution<std::size_t> d(0, n - 1);
  return d(engine_);
}

Rng Rng::split() {
  const std::uint64_t a = engine_();
  const std::uint64_t b = engine_();
  return Rng(a, b);
}

Matrix Rng::gaussian_matrix(Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = gaussian();
  return m;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_ << ' ' << uniform_;
  return os.str();
}

void Rng::deserialize(const std::string& text) {
  std::istringstream is(text);
  is >> engine_ >> normal_ >> uniform_;
  if (!is) throw DataError("malformed rng state");
}

bool Rng::operator==(const Rng& other) const {
  return engine_ == other.engine_ && normal_ == other.normal_;
}

Matrix normalize_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double n = m.row(i).norm();
    if (!(n > kDegenerateNorm)) {
      throw DegenerateFeature("row " + std::to_string(i) + " has degenerate norm " +
                              std::to_string(n));
    }
    out.row(i) = m.row(i) / n;
  }
  return out;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace clel
