#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "clel/common.hpp"
#include "clel/data.hpp"
#include "clel/sgld.hpp"

namespace clel {

class EnergyModel;
class Encoder;

struct ScoreReport {
  std::string metric;
  double value = 0.0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
};

/// Median pairwise Euclidean distance of the pooled samples (deterministic
/// strided subsample above 2000 points).
double median_distance(const Matrix& a, const Matrix& b);
/// Median heuristic × {0.5, 1, 2}.
std::vector<double> default_bandwidths(const Matrix& a, const Matrix& b);

/// Unbiased MMD² with the kernel Σ_h exp(−‖x−y‖²/(2h²)).
double mmd(const Matrix& a, const Matrix& b, const std::vector<double>& bandwidths);
double mmd_biased(const Matrix& a, const Matrix& b, const std::vector<double>& bandwidths);
/// 2E‖X−Y‖ − E‖X−X′‖ − E‖Y−Y′‖ (V-statistic).
double energy_distance(const Matrix& a, const Matrix& b);

/// Unbiased MMD² of `permutations` random relabelings of a ∪ b.
std::vector<double> mmd_permutation_null(const Matrix& a, const Matrix& b,
                                         const std::vector<double>& bandwidths, int permutations,
                                         Rng& rng);
/// Empirical q-quantile (linear interpolation).
double quantile(std::vector<double> values, double q);

/// P(out > in) + ½ P(out = in) over all pairs.
double auroc(const std::vector<double>& scores_in, const std::vector<double>& scores_out);

/// Σ zᵢ / ‖Σ zᵢ‖; DegenerateAggregate when the sum nearly cancels.
UnitLatent aggregate_latents(const std::vector<UnitLatent>& latents);
UnitLatent aggregate_latents(const Matrix& latent_rows);

/// Aggregated encoder latent of the points of a `pool`-sized draw that lie
/// nearest to mode `mode` of the dataset.
UnitLatent mode_concept(const Encoder& encoder, const DatasetSpec& spec, int mode, Rng& data_rng,
                        Eigen::Index pool = 4000);

/// SGLD on x ↦ E(x, z) from fresh uniform starts over the clamp box,
/// cfg.eval_steps steps.
Matrix conditional_sample(const EnergyModel& ebm, const UnitLatent& z, const SgldConfig& cfg,
                          Eigen::Index n, Rng& rng);
/// SGLD on the compositional energy of `concepts`.
Matrix compositional_sample(const EnergyModel& ebm, const std::vector<UnitLatent>& concepts,
                            const SgldConfig& cfg, Eigen::Index n, Rng& rng);

struct Histogram {
  std::vector<double> edges;   // bins + 1 edges over [-1, 1]
  std::vector<double> counts;  // raw pair counts per bin
  std::size_t pairs = 0;
  double mean = 0.0;
  double stddev = 0.0;

  double mass(std::size_t bin) const { return counts[bin] / static_cast<double>(pairs); }
  std::size_t bin_of(double value) const;
};

/// Pairwise cosine similarities of the rows of `vectors`, over all unordered
/// pairs or `max_pairs` uniformly drawn pairs when there are more.
Histogram cosine_histogram(const Matrix& vectors, int bins, Rng& rng,
                           std::size_t max_pairs = 1'000'000);

struct FlexibilityReport {
  double max_discrepancy = 0.0;
  double min_energy = 0.0;
  bool passed = false;
};

/// Builds f2(x) = (√(f1(x) − min f1), 0, …, 0) ∈ ℝ^d and compares the
/// grid-normalized densities exp(−(f1 − b)) and exp(−‖f2‖²).
FlexibilityReport flexibility_check(const Vector& f1, int d, double tolerance = 1e-10);

struct OodReport {
  ScoreReport joint;     // ood_score
  ScoreReport marginal;  // alignment term dropped
};

OodReport ood_eval(const EnergyModel& ebm, const Encoder& encoder, const Matrix& in_set,
                   const Matrix& out_set, std::uint64_t config_hash = 0, std::uint64_t seed = 0);

/// Fraction of rows nearest to each center.
std::vector<double> mode_fractions(const Matrix& centers, const Matrix& samples);

/// (x0, x1, marginal energy) over a res × res grid of [lo, hi]².
Matrix energy_grid(const EnergyModel& ebm, double lo, double hi, int resolution);

}  // namespace clel
