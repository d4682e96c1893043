#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>

#include "clel/common.hpp"
#include "clel/latent_encoder.hpp"

namespace clel {

class EnergyModel;

/// Langevin update x' = clamp(x − λ∇E(x) + σδ). λ (grad_coeff) and σ
/// (noise_scale) are independent; the textbook coupling is λ = ε²/2, σ = ε.
struct SgldConfig {
  int step_count = 60;
  double grad_coeff = 1e-2;
  double noise_scale = 1e-2;
  std::optional<double> clamp_lo;
  std::optional<double> clamp_hi;
  int aug_period = 60;
  int eval_steps = 600;

  void validate() const;
  static SgldConfig coupled(double epsilon, int steps);
};

/// Batched ∇ₓE: one gradient row per input row.
using GradFn = std::function<Matrix(const Matrix&)>;

/// One Langevin step for every row of `x`. `noise` overrides the Gaussian
/// draw (used to pin δ in tests). Throws ChainDiverged on a non-finite
/// gradient, carrying the row index.
Matrix sgld_step(const GradFn& grad, const Matrix& x, const SgldConfig& cfg, Rng& rng,
                 const Matrix* noise = nullptr);

/// One persistent segment: an optional augmentation of `x0`, then
/// `steps` (default cfg.step_count) Langevin steps.
Matrix run_chain(const GradFn& grad, const Matrix& x0, const SgldConfig& cfg,
                 const AugmentationPolicy* policy, Rng& rng, std::optional<int> steps = {});

/// Fresh chain states: uniform over the clamp box.
using InitSampler = std::function<Matrix(Eigen::Index n, Rng& rng)>;
InitSampler uniform_init(int dim, double lo, double hi);

class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  ReplayBuffer(std::size_t capacity, int dim, double reinit_prob, std::uint64_t seed);

  struct Starts {
    Matrix states;
    std::size_t fresh = 0;
  };

  /// Each start is a fresh draw with probability reinit_prob, otherwise a
  /// uniformly chosen stored state; all fresh when empty.
  Starts draw_starts(Eigen::Index n, const InitSampler& init, Rng& rng) const;
  /// Appends states; over capacity, evicts uniformly random old entries.
  void push(const Matrix& states);

  std::size_t size() const { return count_; }
  std::size_t capacity() const { return capacity_; }
  int dim() const { return dim_; }
  double reinit_prob() const { return reinit_prob_; }
  Matrix contents() const { return storage_.topRows(static_cast<Eigen::Index>(count_)); }

  /// Restores stored states and eviction stream (checkpoint resume).
  void restore(const Matrix& states, const std::string& rng_state);
  std::string rng_state() const { return rng_.serialize(); }

 private:
  std::size_t capacity_ = 0;
  int dim_ = 0;
  double reinit_prob_ = 0.0;
  Matrix storage_;
  std::size_t count_ = 0;
  Rng rng_;
};

struct SampleResult {
  Matrix samples;
  std::size_t fresh = 0;
};

/// Training mode: starts from the buffer, one augmented persistent segment on
/// marginal-energy gradients, finals pushed back. Evaluation mode: fresh
/// uniform starts, cfg.eval_steps steps, no augmentation, buffer untouched.
SampleResult sample_batch(const EnergyModel& ebm, ReplayBuffer* buffer, Eigen::Index n,
                          const SgldConfig& cfg, const AugmentationPolicy* policy, Rng& rng,
                          bool evaluation = false);

}  // namespace clel
