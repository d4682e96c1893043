#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace clel {

// Batches are row-major: one sample (or one latent) per row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr double kDegenerateNorm = 1e-12;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class DegenerateFeature : public Error {
 public:
  using Error::Error;
};

class DegenerateProjection : public Error {
 public:
  using Error::Error;
};

class DegenerateAggregate : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

/// Raised when a Langevin chain produces a non-finite gradient. Carries the
/// offending state, the chain row within its batch and the step index.
class ChainDiverged : public Error {
 public:
  ChainDiverged(std::string what, Vector state, std::ptrdiff_t batch_index,
                std::ptrdiff_t step_index)
      : Error(std::move(what)),
        state_(std::move(state)),
        batch_index_(batch_index),
        step_index_(step_index) {}

  const Vector& state() const { return state_; }
  std::ptrdiff_t batch_index() const { return batch_index_; }
  std::ptrdiff_t step_index() const { return step_index_; }
  void set_step_index(std::ptrdiff_t step) { step_index_ = step; }

 private:
  Vector state_;
  std::ptrdiff_t batch_index_;
  std::ptrdiff_t step_index_;
};

/// A point on the unit sphere. Construction always normalizes or validates.
class UnitLatent {
 public:
  static constexpr double kTolerance = 1e-6;

  /// Normalizes `v`; throws DegenerateFeature when ‖v‖ ≤ 1e-12.
  static UnitLatent normalize(const Vector& v);
  /// Wraps an already-normalized vector; throws ArgumentError otherwise.
  static UnitLatent from_unit(Vector v);

  const Vector& values() const { return values_; }
  Eigen::Index dim() const { return values_.size(); }

 private:
  explicit UnitLatent(Vector v) : values_(std::move(v)) {}
  Vector values_;
};

/// Seedable random stream. All stochastic operations take one explicitly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);
  /// Independent stream keyed by (seed, stream); different stream ids never
  /// share an engine state.
  Rng(std::uint64_t seed, std::uint64_t stream);

  double gaussian() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next_u64() { return engine_(); }

  /// Child stream seeded from this one.
  Rng split();

  Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols);

  std::string serialize() const;
  void deserialize(const std::string& text);

  bool operator==(const Rng& other) const;

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Rows of `m` scaled to unit norm. Throws DegenerateFeature on a row whose
/// norm is at or below 1e-12.
Matrix normalize_rows(const Matrix& m);

bool all_finite(const Matrix& m);

}  // namespace clel
