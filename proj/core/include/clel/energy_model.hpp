#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "clel/common.hpp"
#include "clel/nn.hpp"

namespace clel {

class Encoder;

enum class ModelVariant { norm_direction, multi_head };
enum class ProjectorKind { mlp, linear, identity };

std::string to_string(ModelVariant v);
std::string to_string(ProjectorKind p);
ModelVariant parse_model_variant(const std::string& s);
ProjectorKind parse_projector_kind(const std::string& s);

struct EnergyModelConfig {
  InputShape input{2, 1, 1};
  /// Hidden layers of f; a final dense layer of width d_z is appended.
  std::vector<LayerSpec> hidden{{LayerKind::dense, 128}, {LayerKind::dense, 128}};
  int d_z = 128;
  double beta = 0.01;
  ModelVariant variant = ModelVariant::norm_direction;
  ProjectorKind projector = ProjectorKind::mlp;
  bool spectral_norm = true;
  /// Use ½‖f‖ instead of ½‖f‖² as the norm term of compositional_energy.
  bool unsquared_composition = false;
};

/// Spherical latent-variable EBM:
///   E(x, z) = ½‖f(x)‖² − β g(f(x)/‖f(x)‖)ᵀ z,   E(x) = ½‖f(x)‖².
/// f is the feature network, g the directional projector onto the sphere.
/// The multi-head variant instead scores E(x) = g′(f(x)) with a scalar head
/// and feeds f(x) (not its direction) to g.
class EnergyModel {
 public:
  /// Intermediate values of one batched evaluation, kept for backward.
  struct Pass {
    Network::Tape feature_tape;
    Matrix features;
    Vector feature_norms;
    Matrix projector_input;  // f/‖f‖ (norm-direction) or f (multi-head)
    Network::Tape projector_tape;
    Matrix projector_raw;
    Vector projector_norms;
    Matrix projected;  // unit rows
    Network::Tape head_tape;
    Vector head;  // scalar head output, multi-head only
    bool has_projection = false;
  };

  EnergyModel() = default;
  EnergyModel(const EnergyModelConfig& config, Rng& rng);

  const EnergyModelConfig& config() const { return config_; }
  double beta() const { return config_.beta; }
  void set_beta(double beta);
  int d_z() const { return config_.d_z; }
  int input_dim() const { return feature_.input_dim(); }

  Pass forward(const Matrix& x, bool with_projection) const;
  /// Norm (marginal) term per row.
  Vector marginal(const Pass& pass, bool unsquared = false) const;
  /// ⟨g(·), t_i⟩ per row for target rows t_i.
  Vector alignment(const Pass& pass, const Matrix& targets) const;

  /// Gradient w.r.t. x of Σ_i [a_i · marginal_i + b_i · alignment_i], where a
  /// and b are per-row coefficients. With `param_grads`, the same gradient is
  /// accumulated into every EBM parameter.
  Matrix backward(const Pass& pass, const Matrix* targets, const Vector& norm_coeff,
                  const Vector& align_coeff, bool param_grads, bool unsquared = false);
  Matrix input_gradient(const Pass& pass, const Matrix* targets, const Vector& norm_coeff,
                        const Vector& align_coeff, bool unsquared = false) const;

  Matrix features(const Matrix& x) const;
  Matrix project_direction(const Matrix& u) const;
  UnitLatent project_direction(const UnitLatent& u) const;
  Vector marginal_energy(const Matrix& x) const;
  Vector joint_energy(const Matrix& x, const Matrix& z) const;
  Vector compositional_energy(const Matrix& x, const std::vector<UnitLatent>& concepts) const;
  /// (scalar-head marginal, −zᵀg(f(x))) per row; multi-head variant only.
  std::pair<Vector, Vector> multihead_energy(const Matrix& x, const Matrix& z) const;
  /// g(f(x)/‖f(x)‖): the sphere point minimizing E(x, ·).
  Matrix mode_latent(const Matrix& x) const;

  /// ∇ₓ E(x) per row.
  Matrix marginal_energy_grad(const Matrix& x) const;
  /// ∇ₓ E(x, t) per row with the alignment term against target rows.
  Matrix joint_energy_grad(const Matrix& x, const Matrix& targets, bool unsquared = false) const;

  void zero_grad();
  std::vector<ParamRef> params();
  std::vector<BufferRef> buffers();
  void spectral_step(int iterations);
  void spectral_refresh();
  void spectral_converge();

  Network& feature_net() { return feature_; }
  const Network& feature_net() const { return feature_; }
  Network& projector_net() { return projector_; }
  Network& head_net() { return head_; }

 private:
  bool has_projector_net() const { return config_.projector != ProjectorKind::identity; }
  bool multi_head() const { return config_.variant == ModelVariant::multi_head; }
  Matrix backward_impl(const Pass& pass, const Matrix* targets, const Vector& norm_coeff,
                       const Vector& align_coeff, bool unsquared, EnergyModel* accum) const;

  EnergyModelConfig config_;
  Network feature_;
  Network projector_;
  Network head_;
};

/// f/‖f‖; throws DegenerateFeature when ‖f‖ ≤ 1e-12.
UnitLatent direction(const Vector& f);

/// ½‖f(x)‖² − β g(f/‖f‖)ᵀ h(x)/‖h(x)‖ on clean inputs; higher means more
/// out-of-distribution.
Vector ood_score(const EnergyModel& ebm, const Encoder& encoder, const Matrix& x);

}  // namespace clel
