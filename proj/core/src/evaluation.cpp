#include "clel/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "clel/data.hpp"
#include "clel/energy_model.hpp"
#include "clel/latent_encoder.hpp"

namespace clel {
namespace {

void check_pair(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw ArgumentError("two-sample statistic on an empty sample");
  if (a.cols() != b.cols()) throw ArgumentError("two-sample statistic on mismatched dimensions");
}

// Σ_{i,j} k(a_i, b_j), skipping i == j when `same`.
double kernel_sum(const Matrix& a, const Matrix& b, const std::vector<double>& bw, bool same) {
  std::vector<double> inv(bw.size());
  for (std::size_t k = 0; k < bw.size(); ++k) inv[k] = 1.0 / (2.0 * bw[k] * bw[k]);
  const Vector an = a.rowwise().squaredNorm();
  const Vector bn = b.rowwise().squaredNorm();
  double total = 0.0;
  constexpr Eigen::Index kBlock = 512;
  for (Eigen::Index i0 = 0; i0 < a.rows(); i0 += kBlock) {
    const Eigen::Index ni = std::min(kBlock, a.rows() - i0);
    const Matrix cross = a.middleRows(i0, ni) * b.transpose();
    for (Eigen::Index i = 0; i < ni; ++i) {
      for (Eigen::Index j = 0; j < b.rows(); ++j) {
        if (same && i0 + i == j) continue;
        const double d2 = std::max(0.0, an(i0 + i) + bn(j) - 2.0 * cross(i, j));
        for (double c : inv) total += std::exp(-d2 * c);
      }
    }
  }
  return total;
}

double mean_distance(const Matrix& a, const Matrix& b, bool same) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = same ? i + 1 : 0; j < b.rows(); ++j) total += (a.row(i) - b.row(j)).norm();
  }
  const double na = static_cast<double>(a.rows()), nb = static_cast<double>(b.rows());
  return same ? 2.0 * total / (na * na) : total / (na * nb);
}

Matrix latent_guided_sample(const EnergyModel& ebm, const Vector& target, bool unsquared,
                            const SgldConfig& cfg, Eigen::Index n, Rng& rng) {
  cfg.validate();
  const double lo = cfg.clamp_lo.value_or(-1.0);
  const double hi = cfg.clamp_hi.value_or(1.0);
  const Matrix targets = target.transpose().replicate(n, 1);
  const GradFn grad = [&](const Matrix& x) { return ebm.joint_energy_grad(x, targets, unsquared); };
  const Matrix starts = uniform_init(ebm.input_dim(), lo, hi)(n, rng);
  return run_chain(grad, starts, cfg, nullptr, rng, cfg.eval_steps);
}

}  // namespace

double median_distance(const Matrix& a, const Matrix& b) {
  check_pair(a, b);
  Matrix pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  constexpr Eigen::Index kMax = 2000;
  const Eigen::Index stride = std::max<Eigen::Index>(1, (pooled.rows() + kMax - 1) / kMax);
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < pooled.rows(); i += stride) idx.push_back(i);
  std::vector<double> d;
  d.reserve(idx.size() * (idx.size() - 1) / 2);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = i + 1; j < idx.size(); ++j) {
      d.push_back((pooled.row(idx[i]) - pooled.row(idx[j])).norm());
    }
  }
  if (d.empty()) return 1.0;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  const double med = d[d.size() / 2];
  return med > 0 ? med : 1.0;
}

std::vector<double> default_bandwidths(const Matrix& a, const Matrix& b) {
  const double m = median_distance(a, b);
  return {0.5 * m, m, 2.0 * m};
}

double mmd(const Matrix& a, const Matrix& b, const std::vector<double>& bandwidths) {
  check_pair(a, b);
  const double na = static_cast<double>(a.rows()), nb = static_cast<double>(b.rows());
  if (a.rows() < 2 || b.rows() < 2) throw ArgumentError("unbiased MMD needs two points per sample");
  return kernel_sum(a, a, bandwidths, true) / (na * (na - 1)) +
         kernel_sum(b, b, bandwidths, true) / (nb * (nb - 1)) -
         2.0 * kernel_sum(a, b, bandwidths, false) / (na * nb);
}

double mmd_biased(const Matrix& a, const Matrix& b, const std::vector<double>& bandwidths) {
  check_pair(a, b);
  const double na = static_cast<double>(a.rows()), nb = static_cast<double>(b.rows());
  return kernel_sum(a, a, bandwidths, false) / (na * na) +
         kernel_sum(b, b, bandwidths, false) / (nb * nb) -
         2.0 * kernel_sum(a, b, bandwidths, false) / (na * nb);
}

double energy_distance(const Matrix& a, const Matrix& b) {
  check_pair(a, b);
  return 2.0 * mean_distance(a, b, false) - mean_distance(a, a, true) - mean_distance(b, b, true);
}

std::vector<double> mmd_permutation_null(const Matrix& a, const Matrix& b,
                                         const std::vector<double>& bandwidths, int permutations,
                                         Rng& rng) {
  check_pair(a, b);
  const Eigen::Index na = a.rows(), nb = b.rows(), n = na + nb;
  if (na < 2 || nb < 2) throw ArgumentError("permutation null needs two points per sample");
  Matrix pooled(n, a.cols());
  pooled << a, b;
  // Pooled Gram matrix in single precision; each relabeling is then one
  // matrix-vector product.
  Eigen::MatrixXf gram(n, n);
  std::vector<double> inv;
  for (double h : bandwidths) inv.push_back(1.0 / (2.0 * h * h));
  const Vector sq = pooled.rowwise().squaredNorm();
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = j; i < n; ++i) {
      const double d2 = std::max(0.0, sq(i) + sq(j) - 2.0 * pooled.row(i).dot(pooled.row(j)));
      double k = 0.0;
      for (double c : inv) k += std::exp(-d2 * c);
      gram(i, j) = static_cast<float>(k);
      gram(j, i) = static_cast<float>(k);
    }
  }
  const double diag = static_cast<double>(bandwidths.size());
  const Eigen::VectorXd row_sums = gram.cast<double>().rowwise().sum();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(permutations));
  const double fa = static_cast<double>(na), fb = static_cast<double>(nb);
  for (int p = 0; p < permutations; ++p) {
    for (Eigen::Index i = n - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)],
                order[rng.index(static_cast<std::size_t>(i) + 1)]);
    }
    Eigen::VectorXf ind = Eigen::VectorXf::Zero(n);
    for (Eigen::Index i = 0; i < na; ++i) ind(order[static_cast<std::size_t>(i)]) = 1.0f;
    const Eigen::VectorXd ka = (gram * ind).cast<double>();
    const Eigen::VectorXd ia = ind.cast<double>();
    const Eigen::VectorXd ib = Eigen::VectorXd::Ones(n) - ia;
    const double saa = ia.dot(ka);
    const double sab = ib.dot(ka);
    const double sbb = ib.dot(row_sums) - sab;
    stats.push_back((saa - diag * fa) / (fa * (fa - 1)) + (sbb - diag * fb) / (fb * (fb - 1)) -
                    2.0 * sab / (fa * fb));
  }
  return stats;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ArgumentError("quantile of an empty list");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double auroc(const std::vector<double>& scores_in, const std::vector<double>& scores_out) {
  if (scores_in.empty() || scores_out.empty()) throw ArgumentError("auroc needs non-empty score lists");
  struct Item {
    double score;
    bool out;
  };
  std::vector<Item> items;
  items.reserve(scores_in.size() + scores_out.size());
  for (double s : scores_in) items.push_back({s, false});
  for (double s : scores_out) items.push_back({s, true});
  std::sort(items.begin(), items.end(), [](const Item& x, const Item& y) { return x.score < y.score; });
  double rank_sum_out = 0.0;
  std::size_t i = 0;
  while (i < items.size()) {
    std::size_t j = i;
    while (j < items.size() && items[j].score == items[i].score) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (items[k].out) rank_sum_out += avg_rank;
    }
    i = j;
  }
  const double n_out = static_cast<double>(scores_out.size());
  const double n_in = static_cast<double>(scores_in.size());
  return (rank_sum_out - n_out * (n_out + 1) / 2.0) / (n_in * n_out);
}

UnitLatent aggregate_latents(const std::vector<UnitLatent>& latents) {
  if (latents.empty()) throw ArgumentError("aggregate_latents needs at least one latent");
  Vector sum = Vector::Zero(latents.front().dim());
  for (const UnitLatent& z : latents) {
    if (z.dim() != sum.size()) throw ArgumentError("latent dimension mismatch");
    sum += z.values();
  }
  if (!(sum.norm() > 1e-9)) throw DegenerateAggregate("latents cancel out");
  return UnitLatent::normalize(sum);
}

UnitLatent aggregate_latents(const Matrix& latent_rows) {
  if (latent_rows.rows() == 0) throw ArgumentError("aggregate_latents needs at least one latent");
  const Vector sum = latent_rows.colwise().sum().transpose();
  if (!(sum.norm() > 1e-9)) throw DegenerateAggregate("latents cancel out");
  return UnitLatent::normalize(sum);
}

UnitLatent mode_concept(const Encoder& encoder, const DatasetSpec& spec, int mode, Rng& data_rng,
                        Eigen::Index pool) {
  const Matrix centers = mode_centers(spec);
  if (centers.rows() == 0) throw ArgumentError("mode conditioning needs a dataset with known modes");
  if (mode < 0 || mode >= centers.rows()) throw ArgumentError("mode index out of range");
  const Matrix points = generate(spec, pool, data_rng);
  const std::vector<int> owner = nearest_mode(centers, points);
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    if (owner[static_cast<std::size_t>(i)] == mode) rows.push_back(i);
  }
  if (rows.empty()) throw ArgumentError("no pool points near the requested mode");
  return aggregate_latents(normalize_rows(encoder.encode(points(rows, Eigen::all))));
}

Matrix conditional_sample(const EnergyModel& ebm, const UnitLatent& z, const SgldConfig& cfg,
                          Eigen::Index n, Rng& rng) {
  if (z.dim() != ebm.d_z()) throw ArgumentError("latent dimension mismatch");
  return latent_guided_sample(ebm, z.values(), false, cfg, n, rng);
}

Matrix compositional_sample(const EnergyModel& ebm, const std::vector<UnitLatent>& concepts,
                            const SgldConfig& cfg, Eigen::Index n, Rng& rng) {
  if (concepts.empty()) throw ArgumentError("compositional_sample needs at least one concept");
  Vector sum = Vector::Zero(ebm.d_z());
  for (const UnitLatent& c : concepts) {
    if (c.dim() != ebm.d_z()) throw ArgumentError("concept dimension mismatch");
    sum += c.values();
  }
  return latent_guided_sample(ebm, sum, ebm.config().unsquared_composition, cfg, n, rng);
}

std::size_t Histogram::bin_of(double value) const {
  const std::size_t bins = counts.size();
  const double t = (std::clamp(value, -1.0, 1.0) + 1.0) / 2.0 * static_cast<double>(bins);
  return std::min(bins - 1, static_cast<std::size_t>(std::floor(t)));
}

Histogram cosine_histogram(const Matrix& vectors, int bins, Rng& rng, std::size_t max_pairs) {
  if (vectors.rows() < 2) throw ArgumentError("cosine_histogram needs at least two vectors");
  if (bins < 1) throw ArgumentError("cosine_histogram needs at least one bin");
  const Matrix unit = normalize_rows(vectors);
  Histogram h;
  h.counts.assign(static_cast<std::size_t>(bins), 0.0);
  for (int k = 0; k <= bins; ++k) h.edges.push_back(-1.0 + 2.0 * k / bins);

  const auto n = static_cast<std::size_t>(vectors.rows());
  const std::size_t all_pairs = n * (n - 1) / 2;
  double sum = 0.0, sum_sq = 0.0;
  auto record = [&](Eigen::Index i, Eigen::Index j) {
    const double c = unit.row(i).dot(unit.row(j));
    h.counts[h.bin_of(c)] += 1.0;
    sum += c;
    sum_sq += c * c;
    ++h.pairs;
  };
  if (all_pairs <= max_pairs) {
    for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < vectors.rows(); ++j) record(i, j);
    }
  } else {
    for (std::size_t p = 0; p < max_pairs; ++p) {
      const std::size_t i = rng.index(n);
      std::size_t j = rng.index(n - 1);
      if (j >= i) ++j;
      record(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
  const double np = static_cast<double>(h.pairs);
  h.mean = sum / np;
  h.stddev = std::sqrt(std::max(0.0, sum_sq / np - h.mean * h.mean));
  return h;
}

FlexibilityReport flexibility_check(const Vector& f1, int d, double tolerance) {
  if (d < 1) throw ArgumentError("flexibility_check needs d >= 1");
  if (f1.size() == 0 || !f1.allFinite()) throw ArgumentError("flexibility_check needs finite values");
  FlexibilityReport r;
  r.min_energy = f1.minCoeff();
  Matrix f2 = Matrix::Zero(f1.size(), d);
  for (Eigen::Index i = 0; i < f1.size(); ++i) f2(i, 0) = std::sqrt(f1(i) - r.min_energy);
  const Vector p1 = (-(f1.array() - r.min_energy)).exp().matrix();
  const Vector p2 = (-f2.rowwise().squaredNorm().array()).exp().matrix();
  r.max_discrepancy = (p1 / p1.sum() - p2 / p2.sum()).cwiseAbs().maxCoeff();
  r.passed = r.max_discrepancy < tolerance;
  return r;
}

OodReport ood_eval(const EnergyModel& ebm, const Encoder& encoder, const Matrix& in_set,
                   const Matrix& out_set, std::uint64_t config_hash, std::uint64_t seed) {
  if (in_set.rows() == 0 || out_set.rows() == 0) throw ArgumentError("ood_eval needs non-empty sets");
  auto to_vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  OodReport r;
  const auto joint_in = to_vec(ood_score(ebm, encoder, in_set));
  const auto joint_out = to_vec(ood_score(ebm, encoder, out_set));
  const auto marg_in = to_vec(ebm.marginal_energy(in_set));
  const auto marg_out = to_vec(ebm.marginal_energy(out_set));
  const auto in_n = static_cast<std::size_t>(in_set.rows());
  const auto out_n = static_cast<std::size_t>(out_set.rows());
  r.joint = {"auroc_joint", auroc(joint_in, joint_out), in_n, out_n, config_hash, seed};
  r.marginal = {"auroc_marginal", auroc(marg_in, marg_out), in_n, out_n, config_hash, seed};
  return r;
}

std::vector<double> mode_fractions(const Matrix& centers, const Matrix& samples) {
  std::vector<double> out(static_cast<std::size_t>(centers.rows()), 0.0);
  if (samples.rows() == 0) return out;
  for (int k : nearest_mode(centers, samples)) out[static_cast<std::size_t>(k)] += 1.0;
  for (double& f : out) f /= static_cast<double>(samples.rows());
  return out;
}

Matrix energy_grid(const EnergyModel& ebm, double lo, double hi, int resolution) {
  if (resolution < 2) throw ArgumentError("energy_grid needs resolution >= 2");
  if (ebm.input_dim() != 2) throw ArgumentError("energy_grid is defined for 2D models");
  Matrix pts(resolution * resolution, 2);
  for (int i = 0; i < resolution; ++i) {
    for (int j = 0; j < resolution; ++j) {
      pts(i * resolution + j, 0) = lo + (hi - lo) * j / (resolution - 1);
      pts(i * resolution + j, 1) = lo + (hi - lo) * i / (resolution - 1);
    }
  }
  const Vector e = ebm.marginal_energy(pts);
  Matrix out(pts.rows(), 3);
  out << pts, e;
  return out;
}

}  // namespace clel
