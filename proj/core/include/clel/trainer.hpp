#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "clel/config.hpp"
#include "clel/data.hpp"
#include "clel/energy_model.hpp"
#include "clel/latent_encoder.hpp"
#include "clel/objectives.hpp"
#include "clel/sgld.hpp"

namespace clel {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct SgdConfig {
  double lr = 3e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// Complete hyperparameter record of one run.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string dataset_id = "gauss8";
  OodKind ood = OodKind::uniform;
  std::string image_dir;

  EnergyModelConfig model;
  EncoderConfig encoder;
  LossConfig loss;
  SgldConfig sgld;
  bool sgld_augment = true;
  double sgld_aug_strength = 0.5;
  std::size_t buffer_capacity = 10000;
  double reinit_prob = 0.001;
  double aug_jitter = 0.03;  // fraction of the dataset's data scale
  double aug_rotation_deg = 10.0;

  AdamConfig ebm_optimizer;
  SgdConfig encoder_optimizer;
  long warmup_iters = 2000;
  long total_iters = 5000;
  int batch_size = 64;
  double ema_decay = 0.999;
  long checkpoint_every = 1000;
  long log_every = 1;
  int max_retries = 3;
  bool record_wall_time = true;

  int eval_samples = 5000;
  int eval_ood = 2000;
  bool eval_use_ema = true;
  int heatmap_resolution = 64;

  Config source = Config::defaults();

  static RunConfig from_config(const Config& config);
  void validate() const;
};

/// Dataset and augmentation policies implied by a RunConfig.
struct RunContext {
  DatasetSpec dataset;
  AugmentationPolicy encoder_policy;
  AugmentationPolicy sgld_policy;
};
RunContext make_context(const RunConfig& config);

class Adam {
 public:
  void step(const std::vector<ParamRef>& params, double lr, const AdamConfig& cfg);
  std::vector<Matrix> m, v;
  long t = 0;
};

class SgdMomentum {
 public:
  void step(const std::vector<ParamRef>& params, double lr, const SgdConfig& cfg);
  std::vector<Matrix> buf;
};

struct TrainState {
  long iteration = 0;
  EnergyModel ebm;
  Encoder encoder;
  Adam ebm_optimizer;
  SgdMomentum encoder_optimizer;
  ReplayBuffer buffer;
  std::vector<Matrix> ema;  // shadow of ebm.params(), same order
  Rng rng;                  // sampling, augmentation and latents
  Rng data_rng;             // training data stream
};

struct Metrics {
  long iter = 0;
  double loss_ebm = 0;
  double loss_le = 0;
  double energy_real_mean = 0;
  double energy_fake_mean = 0;
  std::size_t buffer_size = 0;
  std::size_t fresh_starts = 0;
  double lr_ebm = 0;
  double wall_time_s = 0;
};

double warmup_lr(double base_lr, long iteration, long warmup_iters);
/// shadow ← decay·shadow + (1−decay)·live, per parameter.
void update_ema(std::vector<Matrix>& shadow, const std::vector<Matrix>& live, double decay);

TrainState initial_state(const RunConfig& config, const RunContext& context);

/// One joint update: SGLD negatives, latents, both losses, both optimizers,
/// spectral-norm refresh, EMA. Non-finite values roll the state back and
/// retry with fresh noise; after max_retries failures the state is restored
/// to its pre-step value and TrainingDiverged is thrown.
Metrics train_step(TrainState& state, const Matrix& data_batch, const RunConfig& config,
                   const RunContext& context);

/// Evaluation model: live architecture with the EMA parameters.
EnergyModel ema_model(const TrainState& state);
/// Run sampler settings clamped to the dataset's box.
SgldConfig evaluation_sampler(const RunConfig& config, const RunContext& context);
/// EMA or live EBM per eval.use_ema.
EnergyModel evaluation_model(const TrainState& state, const RunConfig& config);

void save_checkpoint(const TrainState& state, const RunConfig& config,
                     const std::filesystem::path& dir);
/// Rebuilds the full state from a checkpoint directory written by
/// save_checkpoint; the run config is read from the directory's snapshot.
TrainState load_checkpoint(const std::filesystem::path& dir, RunConfig* config_out = nullptr);
RunConfig load_checkpoint_config(const std::filesystem::path& dir);

struct TrainOptions {
  std::optional<std::filesystem::path> resume;
  /// Called after every step; return false to stop early.
  std::function<bool(const Metrics&)> on_step;
};

/// Runs to config.total_iters, writing under `out`: config.txt,
/// metrics.csv, checkpoints/iter_XXXXXXX/ (including iteration 0) and final/.
TrainState train(const RunConfig& config, const std::filesystem::path& out,
                 const TrainOptions& options = {});

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const Metrics& m);

}  // namespace clel
