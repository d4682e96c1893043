#include <doctest.h>

#include <cmath>
#include <numbers>

#include "clel/data.hpp"
#include "clel/evaluation.hpp"
#include "helpers.hpp"

using namespace clel;
using namespace clel::testing;

namespace {

double gauss_kernel(double d2, const std::vector<double>& bw) {
  double k = 0;
  for (double h : bw) k += std::exp(-d2 / (2 * h * h));
  return k;
}

// Unbiased MMD² by the textbook triple sum.
double mmd_reference(const Matrix& a, const Matrix& b, const std::vector<double>& bw) {
  const double n = a.rows(), m = b.rows();
  double saa = 0, sbb = 0, sab = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.rows(); ++j)
      if (i != j) saa += gauss_kernel((a.row(i) - a.row(j)).squaredNorm(), bw);
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      if (i != j) sbb += gauss_kernel((b.row(i) - b.row(j)).squaredNorm(), bw);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      sab += gauss_kernel((a.row(i) - b.row(j)).squaredNorm(), bw);
  return saa / (n * (n - 1)) + sbb / (m * (m - 1)) - 2 * sab / (n * m);
}

}  // namespace

TEST_CASE("MMD against a direct triple sum") {
  Rng rng(1);
  const Matrix a = rng.gaussian_matrix(30, 2);
  const Matrix b = rng.gaussian_matrix(25, 2).array() + 0.5;
  const std::vector<double> bw{0.3, 1.0, 2.5};
  CHECK(mmd(a, b, bw) == doctest::Approx(mmd_reference(a, b, bw)).epsilon(1e-12));
  CHECK(mmd(a, b, bw) == doctest::Approx(mmd(b, a, bw)).epsilon(1e-12));
  CHECK(mmd_biased(a, b, bw) >= 0);
}

TEST_CASE("MMD of identical samples") {
  Rng rng(2);
  const Matrix a = rng.gaussian_matrix(40, 3);
  const std::vector<double> bw{1.0};
  CHECK(std::abs(mmd_biased(a, a, bw)) < 1e-12);
  CHECK(mmd(a, a, bw) <= 1e-12);
}

TEST_CASE("MMD two-point closed form") {
  // a = {0, 0}, b = {1, 1}: saa = sbb = 1, sab = k(1)
  Matrix a = Matrix::Zero(2, 1), b = Matrix::Ones(2, 1);
  const std::vector<double> bw{1.0};
  CHECK(mmd(a, b, bw) == doctest::Approx(2.0 - 2.0 * std::exp(-0.5)));
}

TEST_CASE("MMD input checks") {
  const Matrix a = Matrix::Zero(3, 2);
  CHECK_THROWS_AS(mmd(Matrix(0, 2), a, {1.0}), ArgumentError);
  CHECK_THROWS_AS(mmd(a, Matrix::Zero(3, 3), {1.0}), ArgumentError);
  CHECK_THROWS_AS(mmd(Matrix::Zero(1, 2), a, {1.0}), ArgumentError);
}

TEST_CASE("two draws of gauss8 sit inside the permutation null") {
  const DatasetSpec spec = dataset_spec("gauss8");
  Rng r1(3), r2(4), perm(5);
  const Matrix a = generate(spec, 5000, r1);
  const Matrix b = generate(spec, 5000, r2);
  const auto bw = default_bandwidths(a, b);
  CHECK(bw.size() == 3);
  CHECK(bw[1] == doctest::Approx(2 * bw[0]));
  const auto null = mmd_permutation_null(a, b, bw, 100, perm);
  CHECK(mmd(a, b, bw) < quantile(null, 0.95));

  Rng r3(6);
  const Matrix far = ood_counterpart(spec, 5000, r3);
  CHECK(mmd(a, far, bw) > quantile(null, 0.99));
}

TEST_CASE("energy distance") {
  const Matrix a = Matrix::Zero(1, 2);
  Matrix b(1, 2);
  b << 3, 4;
  CHECK(energy_distance(a, b) == doctest::Approx(10.0));
  Rng rng(7);
  const Matrix c = rng.gaussian_matrix(50, 2);
  CHECK(std::abs(energy_distance(c, c)) < 1e-12);
}

TEST_CASE("quantile interpolates") {
  CHECK(quantile({3, 1, 2, 4}, 0.5) == doctest::Approx(2.5));
  CHECK(quantile({3, 1, 2, 4}, 0.0) == 1);
  CHECK(quantile({3, 1, 2, 4}, 1.0) == 4);
}

TEST_CASE("AUROC") {
  CHECK(auroc({1, 2, 3}, {4, 5, 6}) == 1.0);
  CHECK(auroc({4, 5, 6}, {1, 2, 3}) == 0.0);
  CHECK(auroc({1, 1}, {1, 1, 1}) == 0.5);
  CHECK(auroc({1, 2, 3}, {2.5, 3.5}) == doctest::Approx(5.0 / 6.0));
  CHECK(auroc({1, 3}, {2, 4, 5}) == doctest::Approx(5.0 / 6.0));
  CHECK_THROWS_AS(auroc({}, {1}), ArgumentError);

  Rng rng(8);
  std::vector<double> in(300), out(200), in_t(300), out_t(200);
  for (std::size_t i = 0; i < in.size(); ++i) in[i] = rng.gaussian();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.gaussian() + 0.7;
  for (std::size_t i = 0; i < in.size(); ++i) in_t[i] = std::exp(3 * in[i]);
  for (std::size_t i = 0; i < out.size(); ++i) out_t[i] = std::exp(3 * out[i]);
  CHECK(auroc(in, out) == auroc(in_t, out_t));

  // direct pair count
  double wins = 0;
  for (double o : out)
    for (double i : in) wins += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
  CHECK(auroc(in, out) == doctest::Approx(wins / (in.size() * out.size())).epsilon(1e-12));
}

TEST_CASE("latent aggregation") {
  Vector e1(2), e2(2);
  e1 << 1, 0;
  e2 << 0, 1;
  const UnitLatent s = aggregate_latents(std::vector<UnitLatent>{UnitLatent::from_unit(e1), UnitLatent::from_unit(e2)});
  CHECK(s.values()(0) == doctest::Approx(std::sqrt(0.5)));
  CHECK(s.values()(1) == doctest::Approx(std::sqrt(0.5)));
  CHECK(aggregate_latents(std::vector<UnitLatent>{UnitLatent::from_unit(e1)}).values() == e1);
  CHECK_THROWS_AS(aggregate_latents(std::vector<UnitLatent>{UnitLatent::from_unit(e1), UnitLatent::from_unit(Vector(-e1))}),
                  DegenerateAggregate);
  Matrix rows(3, 2);
  rows << 1, 0, 0, 1, 1, 0;
  const Vector expect = Vector(Eigen::Vector2d(2, 1)).normalized();
  CHECK((aggregate_latents(rows).values() - expect).norm() < 1e-14);
}

TEST_CASE("cosine histogram") {
  Rng rng(9);
  SUBCASE("identical directions fill the top bin") {
    Matrix v(5, 3);
    for (int i = 0; i < 5; ++i) v.row(i) << 1.0 + i, 2.0 + 2 * i, 3.0 + 3 * i;
    const Histogram h = cosine_histogram(v, 20, rng);
    CHECK(h.pairs == 10);
    CHECK(h.mass(19) == 1.0);
    CHECK(h.mean == doctest::Approx(1.0));
  }
  SUBCASE("antipodal pair") {
    Matrix v(2, 2);
    v << 1, 0, -1, 0;
    const Histogram h = cosine_histogram(v, 10, rng);
    CHECK(h.mass(0) == 1.0);
    CHECK(h.bin_of(-1.0) == 0);
    CHECK(h.bin_of(1.0) == 9);
  }
  SUBCASE("orthonormal basis puts all mass at zero") {
    const Matrix v = Matrix::Identity(6, 6);
    const Histogram h = cosine_histogram(v, 21, rng);
    CHECK(h.pairs == 15);
    CHECK(h.mass(h.bin_of(0.0)) == 1.0);
  }
  SUBCASE("uniform sphere moments") {
    // For u, v uniform on S^{d-1}, E[uᵀv] = 0 and Var = 1/d.
    const int d = 128;
    const Matrix v = rng.gaussian_matrix(10000, d);
    const Histogram h = cosine_histogram(v, 50, rng);
    CHECK(std::abs(h.mean) < 0.01);
    CHECK(h.stddev == doctest::Approx(1.0 / std::sqrt(double(d))).epsilon(0.1));
    double total = 0;
    for (std::size_t b = 0; b < h.counts.size(); ++b) total += h.mass(b);
    CHECK(total == doctest::Approx(1.0));
  }
  SUBCASE("zero vector is rejected") {
    Matrix v = Matrix::Zero(3, 2);
    v(0, 0) = 1;
    v(1, 1) = 1;
    CHECK_THROWS_AS(cosine_histogram(v, 10, rng), DegenerateFeature);
  }
}

TEST_CASE("flexibility construction") {
  const int grid = 1000;
  Vector xs = Vector::LinSpaced(grid, -2, 2);
  SUBCASE("constant") {
    const auto r = flexibility_check(Vector::Constant(grid, 3.0), 4);
    CHECK(r.passed);
    CHECK(r.min_energy == 3.0);
  }
  SUBCASE("quadratic") {
    const Vector f1 = 0.5 * xs.array().square();
    const auto r = flexibility_check(f1, 1);
    CHECK(r.passed);
    CHECK(r.max_discrepancy < 1e-10);
  }
  SUBCASE("random energies in higher dimension") {
    Rng rng(10);
    const Vector f1 = 5.0 * rng.gaussian_matrix(grid, 1).col(0);
    const auto r = flexibility_check(f1, 5);
    CHECK(r.passed);
    CHECK(r.min_energy == f1.minCoeff());
  }
}

TEST_CASE("OOD evaluation of an input-independent model is chance") {
  Vector f(3);
  f << 1, 2, 2;
  const EnergyModel ebm = constant_feature_model(f, ProjectorKind::identity, 0.1);
  EncoderConfig ec;
  ec.hidden = {};
  ec.d_z = 3;
  Rng rng(11);
  const Encoder enc(ec, rng);
  const Matrix in = rng.gaussian_matrix(50, 2) * 0.0;
  const Matrix out = Matrix::Zero(40, 2);
  const OodReport r = ood_eval(ebm, enc, in, out, 42, 7);
  CHECK(r.joint.value == 0.5);
  CHECK(r.marginal.value == 0.5);
  CHECK(r.joint.n_a == 50);
  CHECK(r.joint.n_b == 40);
  CHECK(r.joint.config_hash == 42);
  CHECK(r.marginal.seed == 7);
}

TEST_CASE("mode fractions") {
  Matrix c(2, 1), s(4, 1);
  c << -1, 1;
  s << -2, -0.5, 0.7, 3;
  const auto f = mode_fractions(c, s);
  CHECK(f[0] == 0.5);
  CHECK(f[1] == 0.5);
}

TEST_CASE("latent-guided sampling") {
  Rng init(12);
  EnergyModelConfig mc = small_model(4);
  mc.beta = 0.5;
  const EnergyModel ebm(mc, init);
  SgldConfig cfg;
  cfg.eval_steps = 30;
  cfg.clamp_lo = -3;
  cfg.clamp_hi = 3;
  Vector zv(4);
  zv << 1, 0, 0, 0;
  const UnitLatent z = UnitLatent::from_unit(zv);

  Rng a(13), b(13);
  const Matrix s1 = conditional_sample(ebm, z, cfg, 20, a);
  CHECK(s1 == conditional_sample(ebm, z, cfg, 20, b));
  CHECK(s1.cwiseAbs().maxCoeff() <= 3.0);

  Rng c(14), d(14);
  CHECK(conditional_sample(ebm, z, cfg, 20, c) == compositional_sample(ebm, {z}, cfg, 20, d));

  // β = 0 removes the latent from the chain entirely.
  EnergyModel flat = ebm;
  flat.set_beta(0.0);
  Rng e(15), f(15);
  Vector other(4);
  other << 0, 0, 0, 1;
  CHECK(conditional_sample(flat, z, cfg, 10, e) ==
        conditional_sample(flat, UnitLatent::from_unit(other), cfg, 10, f));
  Rng g(15), h(15);
  CHECK(conditional_sample(flat, z, cfg, 10, g) ==
        sample_batch(flat, nullptr, 10, cfg, nullptr, h, true).samples);
}

TEST_CASE("energy grid") {
  Rng rng(16);
  const EnergyModel ebm(small_model(4), rng);
  const Matrix g = energy_grid(ebm, -1, 1, 5);
  REQUIRE(g.rows() == 25);
  REQUIRE(g.cols() == 3);
  CHECK(g.col(2) == ebm.marginal_energy(g.leftCols(2)));
  CHECK(g(0, 0) == -1.0);
  CHECK(g(24, 1) == 1.0);
}
