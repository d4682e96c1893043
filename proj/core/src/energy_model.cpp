#include "clel/energy_model.hpp"

#include <cmath>

#include "clel/latent_encoder.hpp"

namespace clel {

std::string to_string(ModelVariant v) {
  return v == ModelVariant::norm_direction ? "norm-direction" : "multi-head";
}

std::string to_string(ProjectorKind p) {
  switch (p) {
    case ProjectorKind::mlp:
      return "mlp";
    case ProjectorKind::linear:
      return "linear";
    case ProjectorKind::identity:
      return "identity";
  }
  return "mlp";
}

ModelVariant parse_model_variant(const std::string& s) {
  if (s == "norm-direction") return ModelVariant::norm_direction;
  if (s == "multi-head") return ModelVariant::multi_head;
  throw ConfigError("unknown model variant '" + s + "'");
}

ProjectorKind parse_projector_kind(const std::string& s) {
  if (s == "mlp") return ProjectorKind::mlp;
  if (s == "linear") return ProjectorKind::linear;
  if (s == "identity") return ProjectorKind::identity;
  throw ConfigError("unknown projector '" + s + "'");
}

UnitLatent direction(const Vector& f) { return UnitLatent::normalize(f); }

EnergyModel::EnergyModel(const EnergyModelConfig& config, Rng& rng) : config_(config) {
  if (config.d_z < 1) throw ConfigError("d_z must be positive");
  if (!(config.beta >= 0)) throw ConfigError("beta must be nonnegative");

  NetworkSpec fs;
  fs.input = config.input;
  fs.layers = config.hidden;
  fs.layers.push_back({LayerKind::dense, config.d_z});
  fs.activation = Activation::swish;
  fs.spectral_norm = config.spectral_norm;
  feature_ = Network(fs, rng);

  if (config.projector != ProjectorKind::identity) {
    NetworkSpec ps;
    ps.input = {config.d_z, 1, 1};
    if (config.projector == ProjectorKind::mlp) {
      ps.layers = {{LayerKind::dense, config.d_z}, {LayerKind::dense, config.d_z}};
      ps.activation = Activation::leaky_relu;
      ps.bias = false;
    } else {
      ps.layers = {{LayerKind::dense, config.d_z}};
      ps.activation = Activation::identity;
      ps.bias = true;
    }
    projector_ = Network(ps, rng);
  }

  if (config.variant == ModelVariant::multi_head) {
    NetworkSpec hs;
    hs.input = {config.d_z, 1, 1};
    hs.layers = {{LayerKind::dense, config.d_z}, {LayerKind::dense, 1}};
    hs.activation = Activation::swish;
    hs.spectral_norm = config.spectral_norm;
    head_ = Network(hs, rng);
  }
}

void EnergyModel::set_beta(double beta) {
  if (!(beta >= 0)) throw ConfigError("beta must be nonnegative");
  config_.beta = beta;
}

EnergyModel::Pass EnergyModel::forward(const Matrix& x, bool with_projection) const {
  Pass p;
  p.features = feature_.forward(x, &p.feature_tape);
  p.feature_norms = p.features.rowwise().norm();
  if (multi_head()) p.head = head_.forward(p.features, &p.head_tape).col(0);
  if (!with_projection) return p;

  p.has_projection = true;
  if (multi_head()) {
    p.projector_input = p.features;
  } else {
    p.projector_input.resize(p.features.rows(), p.features.cols());
    for (Eigen::Index i = 0; i < p.features.rows(); ++i) {
      const double n = p.feature_norms(i);
      if (std::isfinite(n) && n <= kDegenerateNorm) {
        throw DegenerateFeature("feature norm " + std::to_string(n) + " at row " +
                                std::to_string(i));
      }
      p.projector_input.row(i) = p.features.row(i) / n;
    }
  }
  p.projector_raw = has_projector_net() ? projector_.forward(p.projector_input, &p.projector_tape)
                                        : p.projector_input;
  p.projector_norms = p.projector_raw.rowwise().norm();
  p.projected.resize(p.projector_raw.rows(), p.projector_raw.cols());
  for (Eigen::Index i = 0; i < p.projector_raw.rows(); ++i) {
    const double n = p.projector_norms(i);
    if (std::isfinite(n) && n <= kDegenerateNorm) {
      throw DegenerateProjection("projector output norm " + std::to_string(n) + " at row " +
                                 std::to_string(i));
    }
    p.projected.row(i) = p.projector_raw.row(i) / n;
  }
  return p;
}

Vector EnergyModel::marginal(const Pass& pass, bool unsquared) const {
  if (multi_head()) return pass.head;
  if (unsquared) return 0.5 * pass.feature_norms;
  return 0.5 * pass.feature_norms.array().square().matrix();
}

Vector EnergyModel::alignment(const Pass& pass, const Matrix& targets) const {
  if (!pass.has_projection) throw ArgumentError("alignment needs a pass with projection");
  if (targets.rows() != pass.projected.rows() || targets.cols() != pass.projected.cols()) {
    throw ArgumentError("alignment targets have the wrong shape");
  }
  return pass.projected.cwiseProduct(targets).rowwise().sum();
}

Matrix EnergyModel::backward_impl(const Pass& pass, const Matrix* targets,
                                  const Vector& norm_coeff, const Vector& align_coeff,
                                  bool unsquared, EnergyModel* accum) const {
  const Eigen::Index n = pass.features.rows();
  Matrix grad_f = Matrix::Zero(n, pass.features.cols());

  if (multi_head()) {
    Matrix g_head = norm_coeff;
    grad_f += accum ? accum->head_.backward(pass.head_tape, g_head, true)
                    : head_.input_gradient(pass.head_tape, g_head);
  } else if (unsquared) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double nf = pass.feature_norms(i);
      if (nf > kDegenerateNorm) grad_f.row(i) += norm_coeff(i) * 0.5 * pass.features.row(i) / nf;
    }
  } else {
    grad_f += norm_coeff.asDiagonal() * pass.features;
  }

  if (targets != nullptr && (align_coeff.array() != 0.0).any()) {
    if (!pass.has_projection) throw ArgumentError("alignment gradient needs projection");
    // d⟨w, t⟩/dp for w = p/‖p‖
    Matrix grad_p(n, pass.projected.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto w = pass.projected.row(i);
      const auto t = targets->row(i);
      grad_p.row(i) = align_coeff(i) * (t - w * w.dot(t)) / pass.projector_norms(i);
    }
    Matrix grad_in = grad_p;
    if (has_projector_net()) {
      grad_in = accum ? accum->projector_.backward(pass.projector_tape, grad_p, true)
                      : projector_.input_gradient(pass.projector_tape, grad_p);
    }
    if (multi_head()) {
      grad_f += grad_in;
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto u = pass.projector_input.row(i);
        grad_f.row(i) += (grad_in.row(i) - u * u.dot(grad_in.row(i))) / pass.feature_norms(i);
      }
    }
  }

  return accum ? accum->feature_.backward(pass.feature_tape, grad_f, true)
               : feature_.input_gradient(pass.feature_tape, grad_f);
}

Matrix EnergyModel::backward(const Pass& pass, const Matrix* targets, const Vector& norm_coeff,
                             const Vector& align_coeff, bool param_grads, bool unsquared) {
  return backward_impl(pass, targets, norm_coeff, align_coeff, unsquared,
                       param_grads ? this : nullptr);
}

Matrix EnergyModel::input_gradient(const Pass& pass, const Matrix* targets,
                                   const Vector& norm_coeff, const Vector& align_coeff,
                                   bool unsquared) const {
  return backward_impl(pass, targets, norm_coeff, align_coeff, unsquared, nullptr);
}

Matrix EnergyModel::features(const Matrix& x) const { return feature_.forward(x); }

Matrix EnergyModel::project_direction(const Matrix& u) const {
  const Matrix raw = has_projector_net() ? projector_.forward(u) : u;
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    if (!(raw.row(i).norm() > kDegenerateNorm)) {
      throw DegenerateProjection("projector output vanishes at row " + std::to_string(i));
    }
  }
  return normalize_rows(raw);
}

UnitLatent EnergyModel::project_direction(const UnitLatent& u) const {
  Matrix m = u.values().transpose();
  return UnitLatent::from_unit(project_direction(m).row(0).transpose());
}

Vector EnergyModel::marginal_energy(const Matrix& x) const { return marginal(forward(x, false)); }

Vector EnergyModel::joint_energy(const Matrix& x, const Matrix& z) const {
  const Pass p = forward(x, true);
  return marginal(p) - config_.beta * alignment(p, z);
}

Vector EnergyModel::compositional_energy(const Matrix& x,
                                         const std::vector<UnitLatent>& concepts) const {
  if (concepts.empty()) throw ArgumentError("compositional energy needs at least one concept");
  Vector sum = Vector::Zero(config_.d_z);
  for (const UnitLatent& c : concepts) {
    if (c.dim() != config_.d_z) throw ArgumentError("concept dimension mismatch");
    sum += c.values();
  }
  const Pass p = forward(x, true);
  const Matrix targets = sum.transpose().replicate(x.rows(), 1);
  return marginal(p, config_.unsquared_composition) - config_.beta * alignment(p, targets);
}

std::pair<Vector, Vector> EnergyModel::multihead_energy(const Matrix& x, const Matrix& z) const {
  if (!multi_head()) throw ConfigError("multihead_energy requires the multi-head variant");
  const Pass p = forward(x, true);
  return {p.head, -alignment(p, z)};
}

Matrix EnergyModel::mode_latent(const Matrix& x) const { return forward(x, true).projected; }

Matrix EnergyModel::marginal_energy_grad(const Matrix& x) const {
  const Pass p = forward(x, false);
  const Vector ones = Vector::Ones(x.rows());
  return input_gradient(p, nullptr, ones, Vector::Zero(x.rows()));
}

Matrix EnergyModel::joint_energy_grad(const Matrix& x, const Matrix& targets,
                                      bool unsquared) const {
  const Pass p = forward(x, true);
  const Vector ones = Vector::Ones(x.rows());
  const Vector align = Vector::Constant(x.rows(), -config_.beta);
  return input_gradient(p, &targets, ones, align, unsquared);
}

void EnergyModel::zero_grad() {
  feature_.zero_grad();
  if (has_projector_net()) projector_.zero_grad();
  if (multi_head()) head_.zero_grad();
}

std::vector<ParamRef> EnergyModel::params() {
  std::vector<ParamRef> out = feature_.params("ebm/feature/");
  if (has_projector_net()) {
    auto p = projector_.params("ebm/projector/");
    out.insert(out.end(), p.begin(), p.end());
  }
  if (multi_head()) {
    auto h = head_.params("ebm/head/");
    out.insert(out.end(), h.begin(), h.end());
  }
  return out;
}

std::vector<BufferRef> EnergyModel::buffers() {
  std::vector<BufferRef> out = feature_.buffers("ebm/feature/");
  if (multi_head()) {
    auto h = head_.buffers("ebm/head/");
    out.insert(out.end(), h.begin(), h.end());
  }
  return out;
}

void EnergyModel::spectral_step(int iterations) {
  feature_.spectral_step(iterations);
  if (has_projector_net()) projector_.spectral_step(iterations);
  if (multi_head()) head_.spectral_step(iterations);
}

void EnergyModel::spectral_refresh() { spectral_step(0); }

void EnergyModel::spectral_converge() {
  feature_.spectral_converge();
  if (has_projector_net()) projector_.spectral_converge();
  if (multi_head()) head_.spectral_converge();
}

Vector ood_score(const EnergyModel& ebm, const Encoder& encoder, const Matrix& x) {
  const Matrix h = normalize_rows(encoder.encode(x));
  return ebm.joint_energy(x, h);
}

}  // namespace clel
