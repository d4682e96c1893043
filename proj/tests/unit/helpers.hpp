#pragma once

#include <doctest.h>

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <string>

#include "clel/energy_model.hpp"
#include "clel/latent_encoder.hpp"

namespace clel::testing {

/// Fresh empty directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("clel_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Central differences of a scalar function of a matrix, entry by entry.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x,
                               double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  Matrix xp = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double keep = xp(i, j);
      xp(i, j) = keep + h;
      const double up = f(xp);
      xp(i, j) = keep - h;
      const double down = f(xp);
      xp(i, j) = keep;
      g(i, j) = (up - down) / (2 * h);
    }
  }
  return g;
}

inline double relative_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / scale;
}

/// Small 2D model for fast tests.
inline EnergyModelConfig small_model(int d_z = 8, ProjectorKind projector = ProjectorKind::mlp,
                                     ModelVariant variant = ModelVariant::norm_direction) {
  EnergyModelConfig c;
  c.hidden = {{LayerKind::dense, 16}, {LayerKind::dense, 16}};
  c.d_z = d_z;
  c.projector = projector;
  c.variant = variant;
  return c;
}

inline EncoderConfig small_encoder(int d_z = 8) {
  EncoderConfig c;
  c.hidden = {{LayerKind::dense, 16}};
  c.d_z = d_z;
  return c;
}

/// Model whose features are the constant vector `f`: no hidden layers, zero
/// weights, bias f, no spectral norm.
inline EnergyModel constant_feature_model(const Vector& f, ProjectorKind projector, double beta) {
  EnergyModelConfig c;
  c.hidden = {};
  c.d_z = static_cast<int>(f.size());
  c.projector = projector;
  c.spectral_norm = false;
  c.beta = beta;
  Rng rng(1);
  EnergyModel m(c, rng);
  Layer& last = m.feature_net().layers().back();
  last.weight.setZero();
  last.bias = f.transpose();
  m.feature_net().spectral_refresh();
  return m;
}

}  // namespace clel::testing
