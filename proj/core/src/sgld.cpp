#include "clel/sgld.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

#include "clel/energy_model.hpp"

namespace clel {

void SgldConfig::validate() const {
  if (step_count < 0) throw ConfigError("sgld.step_count must be nonnegative");
  if (!(grad_coeff > 0)) throw ConfigError("sgld.grad_coeff must be positive");
  if (!(noise_scale >= 0)) throw ConfigError("sgld.noise_scale must be nonnegative");
  if (aug_period < 1) throw ConfigError("sgld.aug_period must be positive");
  if (eval_steps < 0) throw ConfigError("sgld.eval_steps must be nonnegative");
  if (clamp_lo && clamp_hi && !(*clamp_lo < *clamp_hi)) {
    throw ConfigError("sgld clamp bounds are inverted");
  }
}

SgldConfig SgldConfig::coupled(double epsilon, int steps) {
  SgldConfig c;
  c.step_count = steps;
  c.grad_coeff = 0.5 * epsilon * epsilon;
  c.noise_scale = epsilon;
  return c;
}

Matrix sgld_step(const GradFn& grad, const Matrix& x, const SgldConfig& cfg, Rng& rng,
                 const Matrix* noise) {
  const Matrix g = grad(x);
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    if (!g.row(i).allFinite()) {
      throw ChainDiverged("non-finite energy gradient in chain " + std::to_string(i),
                          x.row(i).transpose(), i, -1);
    }
  }
  Matrix out = x - cfg.grad_coeff * g;
  if (noise != nullptr) {
    out += cfg.noise_scale * *noise;
  } else if (cfg.noise_scale > 0) {
    out += cfg.noise_scale * rng.gaussian_matrix(x.rows(), x.cols());
  }
  if (cfg.clamp_lo) out = out.cwiseMax(*cfg.clamp_lo);
  if (cfg.clamp_hi) out = out.cwiseMin(*cfg.clamp_hi);
  return out;
}

Matrix run_chain(const GradFn& grad, const Matrix& x0, const SgldConfig& cfg,
                 const AugmentationPolicy* policy, Rng& rng, std::optional<int> steps) {
  Matrix x = policy ? policy->apply(x0, rng) : x0;
  if (cfg.clamp_lo) x = x.cwiseMax(*cfg.clamp_lo);
  if (cfg.clamp_hi) x = x.cwiseMin(*cfg.clamp_hi);
  const int total = steps.value_or(cfg.step_count);
  for (int k = 0; k < total; ++k) {
    try {
      x = sgld_step(grad, x, cfg, rng);
    } catch (ChainDiverged& e) {
      e.set_step_index(k);
      throw;
    }
  }
  return x;
}

InitSampler uniform_init(int dim, double lo, double hi) {
  return [dim, lo, hi](Eigen::Index n, Rng& rng) {
    Matrix m(n, dim);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
  };
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, int dim, double reinit_prob, std::uint64_t seed)
    : capacity_(capacity),
      dim_(dim),
      reinit_prob_(reinit_prob),
      storage_(static_cast<Eigen::Index>(capacity), dim),
      rng_(seed, 0xb0ffe7) {
  if (capacity == 0) throw ConfigError("buffer.capacity must be positive");
  if (!(reinit_prob >= 0 && reinit_prob <= 1)) {
    throw ConfigError("buffer.reinit_prob must lie in [0, 1]");
  }
}

ReplayBuffer::Starts ReplayBuffer::draw_starts(Eigen::Index n, const InitSampler& init,
                                               Rng& rng) const {
  Starts s;
  s.states.resize(n, dim_);
  std::vector<Eigen::Index> fresh_rows;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (count_ == 0 || rng.bernoulli(reinit_prob_)) {
      fresh_rows.push_back(i);
    } else {
      s.states.row(i) = storage_.row(static_cast<Eigen::Index>(rng.index(count_)));
    }
  }
  if (!fresh_rows.empty()) {
    const Matrix fresh = init(static_cast<Eigen::Index>(fresh_rows.size()), rng);
    for (std::size_t k = 0; k < fresh_rows.size(); ++k) {
      s.states.row(fresh_rows[k]) = fresh.row(static_cast<Eigen::Index>(k));
    }
  }
  s.fresh = fresh_rows.size();
  return s;
}

void ReplayBuffer::push(const Matrix& states) {
  if (states.cols() != dim_) throw ArgumentError("pushed states have the wrong dimension");
  const std::size_t k = static_cast<std::size_t>(states.rows());
  // Evict uniformly chosen old entries to make room.
  std::size_t overflow = count_ + k > capacity_ ? count_ + k - capacity_ : 0;
  const std::size_t evict_old = std::min(overflow, count_);
  for (std::size_t e = 0; e < evict_old; ++e) {
    const std::size_t victim = rng_.index(count_);
    storage_.row(static_cast<Eigen::Index>(victim)) =
        storage_.row(static_cast<Eigen::Index>(count_ - 1));
    --count_;
  }
  // More new states than capacity: keep a uniform subset of them.
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  if (k > capacity_) {
    for (std::size_t i = 0; i < capacity_; ++i) {
      std::swap(order[i], order[i + rng_.index(k - i)]);
    }
    order.resize(capacity_);
  }
  for (std::size_t idx : order) {
    storage_.row(static_cast<Eigen::Index>(count_++)) =
        states.row(static_cast<Eigen::Index>(idx));
  }
}

void ReplayBuffer::restore(const Matrix& states, const std::string& rng_state) {
  if (states.rows() > static_cast<Eigen::Index>(capacity_) || states.cols() != dim_) {
    throw DataError("buffer snapshot does not fit the configured buffer");
  }
  count_ = static_cast<std::size_t>(states.rows());
  storage_.topRows(states.rows()) = states;
  rng_.deserialize(rng_state);
}

SampleResult sample_batch(const EnergyModel& ebm, ReplayBuffer* buffer, Eigen::Index n,
                          const SgldConfig& cfg, const AugmentationPolicy* policy, Rng& rng,
                          bool evaluation) {
  cfg.validate();
  const double lo = cfg.clamp_lo.value_or(-1.0);
  const double hi = cfg.clamp_hi.value_or(1.0);
  const InitSampler init = uniform_init(ebm.input_dim(), lo, hi);
  const GradFn grad = [&ebm](const Matrix& x) { return ebm.marginal_energy_grad(x); };

  SampleResult r;
  if (evaluation || buffer == nullptr) {
    r.samples = init(n, rng);
    r.fresh = static_cast<std::size_t>(n);
    r.samples = run_chain(grad, r.samples, cfg, nullptr, rng,
                          evaluation ? cfg.eval_steps : cfg.step_count);
    return r;
  }
  ReplayBuffer::Starts starts = buffer->draw_starts(n, init, rng);
  r.fresh = starts.fresh;
  r.samples = run_chain(grad, starts.states, cfg, policy, rng);
  buffer->push(r.samples);
  return r;
}

}  // namespace clel
