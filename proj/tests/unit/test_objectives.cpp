#include <doctest.h>

#include <cmath>

#include "clel/energy_model.hpp"
#include "clel/latent_encoder.hpp"
#include "clel/objectives.hpp"
#include "helpers.hpp"

using namespace clel;
using namespace clel::testing;

namespace {

Vector unit(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out(k++) = x;
  return out.normalized();
}

// Σ over 2n anchors of −log softmax, written out from the definition with
// plain loops and no max-subtraction.
double simclr_reference(const Matrix& h1, const Matrix& h2, const Matrix& gen, double tau) {
  const Eigen::Index n = h1.rows();
  Matrix z(2 * n, h1.cols());
  z << normalize_rows(h1), normalize_rows(h2);
  const Matrix g = gen.rows() > 0 ? normalize_rows(gen) : gen;
  double total = 0.0;
  for (Eigen::Index r = 0; r < 2 * n; ++r) {
    const Eigen::Index pos = (r + n) % (2 * n);
    double denom = 0.0;
    for (Eigen::Index c = 0; c < 2 * n; ++c) {
      if (c != r) denom += std::exp(z.row(r).dot(z.row(c)) / tau);
    }
    for (Eigen::Index c = 0; c < g.rows(); ++c) denom += std::exp(z.row(r).dot(g.row(c)) / tau);
    total += -std::log(std::exp(z.row(r).dot(z.row(pos)) / tau) / denom);
  }
  return total / static_cast<double>(2 * n);
}

}  // namespace

TEST_CASE("nt_xent closed forms") {
  const Vector z = unit({1, 0});
  const Matrix none(0, 2);
  CHECK(nt_xent(z, z, none, 0.2) == 0.0);
  CHECK(nt_xent(z, unit({0.3, 0.7}), none, 1.0) == 0.0);

  Matrix neg(1, 2);
  neg << 0, 1;
  CHECK(std::abs(nt_xent(z, z, neg, 1.0) - std::log(1 + std::exp(-1.0))) < 1e-12);
  CHECK(std::abs(nt_xent(z, z, neg, 0.5) - std::log(1 + std::exp(-2.0))) < 1e-12);
  CHECK(std::log(1 + std::exp(-1.0)) == doctest::Approx(0.31326).epsilon(1e-5));
  CHECK(std::log(1 + std::exp(-2.0)) == doctest::Approx(0.12693).epsilon(1e-4));

  CHECK_THROWS_AS(nt_xent(z, z, neg, 0.0), ArgumentError);
  CHECK_THROWS_AS(nt_xent(z, z, neg, -1.0), ArgumentError);
}

TEST_CASE("nt_xent is positive and overflow-safe") {
  Rng rng(1);
  const Matrix negs = normalize_rows(rng.gaussian_matrix(4096, 16));
  for (int k = 0; k < 20; ++k) {
    const Vector z = normalize_rows(rng.gaussian_matrix(1, 16)).row(0).transpose();
    const Vector p = normalize_rows(rng.gaussian_matrix(1, 16)).row(0).transpose();
    const double l = nt_xent(z, p, negs, 0.05);
    CHECK(std::isfinite(l));
    CHECK(l > 0.0);
  }
  // Positive identical to every negative: log(1 + m).
  const Vector z = unit({1, 2, 3});
  const Matrix same = z.transpose().replicate(9, 1);
  CHECK(nt_xent(z, z, same, 0.05) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("contrastive loss on a hand-built batch of two") {
  Matrix h1(2, 2), h2(2, 2), gen(2, 2);
  h1 << 1, 0, 0, 1;
  h2 << 0.8, 0.6, -0.6, 0.8;
  gen << -1, 0, 0.6, -0.8;
  const double tau = 0.5;

  // The four anchors written out by hand: (anchor, positive, negatives).
  auto term = [&](const Vector& a, const Vector& p, std::vector<Vector> negs) {
    double denom = std::exp(a.dot(p) / tau);
    for (const Vector& v : negs) denom += std::exp(a.dot(v) / tau);
    return -std::log(std::exp(a.dot(p) / tau) / denom);
  };
  const Vector a1{{1, 0}}, a2{{0, 1}}, b1{{0.8, 0.6}}, b2{{-0.6, 0.8}};
  const Vector g1{{-1, 0}}, g2{{0.6, -0.8}};
  const double expected = (term(a1, b1, {a2, b2, g1, g2}) + term(a2, b2, {a1, b1, g1, g2}) +
                           term(b1, a1, {a2, b2, g1, g2}) + term(b2, a2, {a1, b1, g1, g2})) /
                          4.0;
  CHECK(contrastive_loss(h1, h2, &gen, tau).loss == doctest::Approx(expected).epsilon(1e-14));
  // Scaling the raw encodings changes nothing.
  CHECK(contrastive_loss(3.0 * h1, 0.5 * h2, &gen, tau).loss ==
        doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("contrastive loss without generated negatives is plain SimCLR") {
  Rng rng(2);
  const Matrix h1 = rng.gaussian_matrix(6, 5), h2 = rng.gaussian_matrix(6, 5);
  const Matrix gen = rng.gaussian_matrix(6, 5);
  CHECK(contrastive_loss(h1, h2, nullptr, 0.2).loss ==
        doctest::Approx(simclr_reference(h1, h2, Matrix(0, 5), 0.2)).epsilon(1e-12));
  CHECK(contrastive_loss(h1, h2, &gen, 0.2).loss ==
        doctest::Approx(simclr_reference(h1, h2, gen, 0.2)).epsilon(1e-12));

  CHECK_THROWS_AS(contrastive_loss(h1.topRows(1), h2.topRows(1), nullptr, 0.2), ArgumentError);
  const Matrix g1 = gen.topRows(1);
  CHECK_NOTHROW(contrastive_loss(h1.topRows(1), h2.topRows(1), &g1, 0.2));
}

TEST_CASE("contrastive loss gradients match central differences") {
  Rng rng(3);
  const Matrix h1 = rng.gaussian_matrix(4, 3), h2 = rng.gaussian_matrix(4, 3);
  const Matrix gen = rng.gaussian_matrix(3, 3);
  const ContrastiveResult r = contrastive_loss(h1, h2, &gen, 0.3);
  auto f1 = [&](const Matrix& m) { return contrastive_loss(m, h2, &gen, 0.3).loss; };
  auto f2 = [&](const Matrix& m) { return contrastive_loss(h1, m, &gen, 0.3).loss; };
  CHECK(relative_error(r.grad_h1, numeric_gradient(f1, h1)) < 1e-7);
  CHECK(relative_error(r.grad_h2, numeric_gradient(f2, h2)) < 1e-7);
}

TEST_CASE("encoder_loss parameter gradients match central differences") {
  Rng rng(4);
  Encoder enc(small_encoder(4), rng);
  TrainBatch b;
  b.view1_x = rng.gaussian_matrix(3, 2);
  b.view2_x = rng.gaussian_matrix(3, 2);
  b.fake_z = normalize_rows(rng.gaussian_matrix(3, 4));
  LossConfig cfg;
  enc.zero_grad();
  encoder_loss(b, enc, cfg, true);
  for (const ParamRef& p : enc.params()) {
    auto loss = [&](const Matrix& w) {
      const Matrix keep = *p.value;
      *p.value = w;
      enc.network().spectral_refresh();
      const double l = encoder_loss(b, enc, cfg, false);
      *p.value = keep;
      enc.network().spectral_refresh();
      return l;
    };
    INFO(p.name);
    CHECK(relative_error(*p.grad, numeric_gradient(loss, *p.value)) < 1e-6);
  }
  LossConfig off = cfg;
  off.use_generated_negatives = false;
  TrainBatch single = b;
  single.view1_x = b.view1_x.topRows(1);
  single.view2_x = b.view2_x.topRows(1);
  CHECK_THROWS_AS(encoder_loss(single, enc, off, false), ArgumentError);
}

TEST_CASE("ebm_loss direct evaluation") {
  // f(x) = x, identity projector: E(x) = ½‖x‖², E(x, z) = E(x) − β⟨x/‖x‖, z⟩.
  EnergyModelConfig c;
  c.hidden = {};
  c.d_z = 2;
  c.projector = ProjectorKind::identity;
  c.spectral_norm = false;
  c.beta = 0.1;
  Rng rng(5);
  EnergyModel m(c, rng);
  m.feature_net().layers()[0].weight = Matrix::Identity(2, 2);
  m.feature_net().layers()[0].bias.setZero();
  m.feature_net().spectral_refresh();

  TrainBatch b;
  b.real_x = Matrix(1, 2);
  b.real_x << std::sqrt(3.8), 0.0;  // E(x) = 1.9
  b.real_z = Matrix(1, 2);
  b.real_z << -1.0, 0.0;  // E(x, z) = 1.9 + 0.1 = 2
  b.fake_x = Matrix(1, 2);
  b.fake_x << 0.0, std::sqrt(2.0);  // E(x̃) = 1
  LossConfig lc;
  lc.alpha = 1.0;
  const EbmLossStats s = ebm_loss(b, m, lc, false);
  CHECK(s.loss == doctest::Approx(5.61).epsilon(1e-14));
  CHECK(s.energy_real_mean == doctest::Approx(1.9));
  CHECK(s.energy_fake_mean == doctest::Approx(1.0));

  // α = 0, β = 0: positive minus negative phase.
  m.set_beta(0.0);
  lc.alpha = 0.0;
  CHECK(ebm_loss(b, m, lc, false).loss == doctest::Approx(0.9).epsilon(1e-14));

  b.real_x(0, 0) = std::nan("");
  CHECK_THROWS_AS(ebm_loss(b, m, lc, false), TrainingDiverged);
}

TEST_CASE("stop-gradient separation between the two losses") {
  Rng rng(6);
  EnergyModel ebm(small_model(4), rng);
  Encoder enc(small_encoder(4), rng);
  TrainBatch b;
  b.real_x = rng.gaussian_matrix(5, 2);
  b.fake_x = rng.gaussian_matrix(5, 2);
  b.view1_x = rng.gaussian_matrix(5, 2);
  b.view2_x = rng.gaussian_matrix(5, 2);
  b.real_z = sample_latent(enc, AugmentationPolicy::identity(), b.real_x, rng);
  b.fake_z = mode_latent(ebm, b.fake_x);
  LossConfig lc;

  ebm.zero_grad();
  enc.zero_grad();
  ebm_loss(b, ebm, lc, true);
  for (const ParamRef& p : enc.params()) CHECK(p.grad->isZero(0.0));
  double ebm_grad = 0.0;
  for (const ParamRef& p : ebm.params()) ebm_grad += p.grad->squaredNorm();
  CHECK(ebm_grad > 0.0);

  ebm.zero_grad();
  enc.zero_grad();
  encoder_loss(b, enc, lc, true);
  for (const ParamRef& p : ebm.params()) CHECK(p.grad->isZero(0.0));
  double enc_grad = 0.0;
  for (const ParamRef& p : enc.params()) enc_grad += p.grad->squaredNorm();
  CHECK(enc_grad > 0.0);
}

TEST_CASE("the energy regularizer pulls energies toward zero") {
  // Real and fake batches coincide, so only α(E(x)² + E(x̃)²) drives the step.
  Rng rng(7);
  EnergyModelConfig c = small_model(4);
  c.beta = 0.0;
  c.spectral_norm = false;
  EnergyModel m(c, rng);
  TrainBatch b;
  b.real_x = rng.gaussian_matrix(16, 2);
  b.fake_x = b.real_x;
  b.real_z = normalize_rows(rng.gaussian_matrix(16, 4));
  LossConfig lc;
  lc.beta = 0.0;
  const double before = m.marginal_energy(b.real_x).mean();
  REQUIRE(before > 0.0);
  m.zero_grad();
  ebm_loss(b, m, lc, true);
  for (const ParamRef& p : m.params()) *p.value -= 1e-3 * *p.grad;
  m.spectral_refresh();
  CHECK(m.marginal_energy(b.real_x).mean() < before);
}
