#include "clel/objectives.hpp"

#include <cmath>
#include <limits>

#include "clel/energy_model.hpp"
#include "clel/latent_encoder.hpp"

namespace clel {

void LossConfig::validate() const {
  if (!(tau > 0)) throw ArgumentError("tau must be positive");
  if (!(alpha >= 0)) throw ArgumentError("alpha must be nonnegative");
  if (!(beta >= 0)) throw ArgumentError("beta must be nonnegative");
}

namespace {

double cosine(const Vector& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  return a.dot(b.transpose()) / (a.norm() * b.norm());
}

}  // namespace

double nt_xent(const Vector& z, const Vector& z_pos, const Matrix& negatives, double tau) {
  if (!(tau > 0)) throw ArgumentError("nt_xent: tau must be positive");
  const double pos = z.dot(z_pos) / (z.norm() * z_pos.norm()) / tau;
  double m = pos;
  Vector logits(negatives.rows());
  for (Eigen::Index k = 0; k < negatives.rows(); ++k) {
    logits(k) = cosine(z, negatives.row(k)) / tau;
    m = std::max(m, logits(k));
  }
  double denom = std::exp(pos - m);
  for (Eigen::Index k = 0; k < logits.size(); ++k) denom += std::exp(logits(k) - m);
  return -(pos - m) + std::log(denom);
}

ContrastiveResult contrastive_loss(const Matrix& h1, const Matrix& h2, const Matrix* generated,
                                   double tau) {
  if (!(tau > 0)) throw ArgumentError("tau must be positive");
  const Eigen::Index n = h1.rows();
  if (h2.rows() != n || h2.cols() != h1.cols()) throw ArgumentError("view shapes differ");
  const Eigen::Index m = generated ? generated->rows() : 0;
  if (n < 2 && m == 0) {
    throw ArgumentError("contrastive loss needs n >= 2 or generated negatives");
  }

  Matrix h(2 * n, h1.cols());
  h << h1, h2;
  const Vector norms = h.rowwise().norm();
  const Matrix z = normalize_rows(h);
  const Matrix sim = z * z.transpose() / tau;
  Matrix sim_gen;
  Matrix gen_unit;
  if (m > 0) {
    gen_unit = normalize_rows(*generated);
    sim_gen = z * gen_unit.transpose() / tau;
  }

  const Eigen::Index anchors = 2 * n;
  Matrix grad_z = Matrix::Zero(anchors, h.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < anchors; ++r) {
    const Eigen::Index pos = r < n ? r + n : r - n;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < anchors; ++c) {
      if (c != r) mx = std::max(mx, sim(r, c));
    }
    for (Eigen::Index c = 0; c < m; ++c) mx = std::max(mx, sim_gen(r, c));
    double denom = 0.0;
    for (Eigen::Index c = 0; c < anchors; ++c) {
      if (c != r) denom += std::exp(sim(r, c) - mx);
    }
    for (Eigen::Index c = 0; c < m; ++c) denom += std::exp(sim_gen(r, c) - mx);
    total += -(sim(r, pos) - mx) + std::log(denom);

    const double scale = 1.0 / (static_cast<double>(anchors) * tau);
    for (Eigen::Index c = 0; c < anchors; ++c) {
      if (c == r) continue;
      const double p = std::exp(sim(r, c) - mx) / denom - (c == pos ? 1.0 : 0.0);
      grad_z.row(r) += scale * p * z.row(c);
      grad_z.row(c) += scale * p * z.row(r);
    }
    for (Eigen::Index c = 0; c < m; ++c) {
      const double p = std::exp(sim_gen(r, c) - mx) / denom;
      grad_z.row(r) += scale * p * gen_unit.row(c);
    }
  }

  // back through z = h/‖h‖
  Matrix grad_h(anchors, h.cols());
  for (Eigen::Index r = 0; r < anchors; ++r) {
    grad_h.row(r) = (grad_z.row(r) - z.row(r) * z.row(r).dot(grad_z.row(r))) / norms(r);
  }
  ContrastiveResult out;
  out.loss = total / static_cast<double>(anchors);
  out.grad_h1 = grad_h.topRows(n);
  out.grad_h2 = grad_h.bottomRows(n);
  return out;
}

double encoder_loss(const TrainBatch& batch, Encoder& encoder, const LossConfig& cfg,
                    bool accumulate) {
  cfg.validate();
  Network::Tape t1, t2;
  const Matrix h1 = encoder.encode(batch.view1_x, &t1);
  const Matrix h2 = encoder.encode(batch.view2_x, &t2);
  const Matrix* generated = cfg.use_generated_negatives ? &batch.fake_z : nullptr;
  if (generated && generated->rows() == 0) generated = nullptr;
  const ContrastiveResult r = contrastive_loss(h1, h2, generated, cfg.tau);
  if (!std::isfinite(r.loss)) throw TrainingDiverged("encoder loss is not finite");
  if (accumulate) {
    encoder.backward(t1, r.grad_h1);
    encoder.backward(t2, r.grad_h2);
  }
  return r.loss;
}

EbmLossStats ebm_loss(const TrainBatch& batch, EnergyModel& ebm, const LossConfig& cfg,
                      bool accumulate) {
  cfg.validate();
  const Eigen::Index n = batch.real_x.rows();
  if (n == 0 || batch.fake_x.rows() != n) {
    throw ArgumentError("ebm_loss needs equally sized, non-empty real and fake batches");
  }
  const double beta = ebm.beta();
  const EnergyModel::Pass real = ebm.forward(batch.real_x, true);
  const EnergyModel::Pass fake = ebm.forward(batch.fake_x, false);
  const Vector real_marginal = ebm.marginal(real);
  const Vector real_joint = real_marginal - beta * ebm.alignment(real, batch.real_z);
  const Vector fake_marginal = ebm.marginal(fake);
  if (!real_joint.allFinite() || !fake_marginal.allFinite()) {
    throw TrainingDiverged("non-finite energy in ebm_loss");
  }

  const double a = cfg.alpha;
  EbmLossStats s;
  s.loss = (real_joint - fake_marginal +
            a * (real_marginal.array().square() + fake_marginal.array().square()).matrix())
               .mean();
  s.energy_real_mean = real_marginal.mean();
  s.energy_fake_mean = fake_marginal.mean();
  if (!std::isfinite(s.loss)) throw TrainingDiverged("ebm loss is not finite");

  if (accumulate) {
    const double inv = 1.0 / static_cast<double>(n);
    const Vector real_norm = ((1.0 + 2.0 * a * real_marginal.array()) * inv).matrix();
    const Vector real_align = Vector::Constant(n, -beta * inv);
    ebm.backward(real, &batch.real_z, real_norm, real_align, true);
    const Vector fake_norm = ((-1.0 + 2.0 * a * fake_marginal.array()) * inv).matrix();
    ebm.backward(fake, nullptr, fake_norm, Vector::Zero(n), true);
  }
  return s;
}

}  // namespace clel
