#include "clel/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "clel/container.hpp"

namespace clel {
namespace {

std::vector<LayerSpec> architecture(const RunConfig& config, const DatasetSpec& dataset,
                                    const std::string& dense_key) {
  std::vector<LayerSpec> layers;
  if (dataset.id == DatasetId::image_dir) {
    for (int c : config.source.int_list("model.conv_channels")) {
      layers.push_back({LayerKind::conv, c, 3, 2, 1});
    }
  }
  for (int w : config.source.int_list(dense_key)) layers.push_back({LayerKind::dense, w});
  return layers;
}

std::vector<Matrix> values_of(const std::vector<ParamRef>& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const ParamRef& p : params) out.push_back(*p.value);
  return out;
}

bool grads_finite(const std::vector<ParamRef>& params) {
  for (const ParamRef& p : params) {
    if (!p.grad->allFinite()) return false;
  }
  return true;
}

std::string checkpoint_name(long iteration) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "iter_%07ld", iteration);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

RunConfig RunConfig::from_config(const Config& c) {
  RunConfig r;
  r.source = c;
  r.seed = static_cast<std::uint64_t>(c.integer("seed"));
  r.dataset_id = c.str("dataset.id");
  parse_dataset_id(r.dataset_id);
  r.ood = parse_ood_kind(c.str("dataset.ood"));
  r.image_dir = c.str("dataset.image_dir");

  r.model.d_z = static_cast<int>(c.integer("model.d_z"));
  r.model.beta = c.real("loss.beta");
  r.model.variant = parse_model_variant(c.str("model.variant"));
  r.model.projector = parse_projector_kind(c.str("model.projector"));
  r.model.spectral_norm = c.flag("model.spectral_norm");
  r.model.unsquared_composition = c.flag("model.unsquared_composition");
  r.model.hidden.clear();
  for (int w : c.int_list("model.hidden")) r.model.hidden.push_back({LayerKind::dense, w});
  r.encoder.d_z = r.model.d_z;
  r.encoder.hidden.clear();
  for (int w : c.int_list("encoder.hidden")) r.encoder.hidden.push_back({LayerKind::dense, w});

  r.loss.alpha = c.real("loss.alpha");
  r.loss.beta = c.real("loss.beta");
  r.loss.tau = c.real("loss.tau");
  r.loss.use_generated_negatives = c.flag("loss.generated_negatives");

  r.sgld.step_count = static_cast<int>(c.integer("sgld.step_count"));
  r.sgld.grad_coeff = c.real("sgld.grad_coeff");
  r.sgld.noise_scale = c.real("sgld.noise_scale");
  r.sgld.eval_steps = static_cast<int>(c.integer("sgld.eval_steps"));
  r.sgld.aug_period = r.sgld.step_count > 0 ? r.sgld.step_count : 1;
  r.sgld_augment = c.flag("sgld.augment");
  r.sgld_aug_strength = c.real("sgld.aug_strength");
  r.buffer_capacity = static_cast<std::size_t>(c.integer("buffer.capacity"));
  r.reinit_prob = c.real("buffer.reinit_prob");
  r.aug_jitter = c.real("aug.jitter");
  r.aug_rotation_deg = c.real("aug.rotation_deg");

  r.ebm_optimizer.lr = c.real("optim.ebm_lr");
  r.ebm_optimizer.beta1 = c.real("optim.ebm_beta1");
  r.ebm_optimizer.beta2 = c.real("optim.ebm_beta2");
  r.ebm_optimizer.eps = c.real("optim.ebm_eps");
  r.encoder_optimizer.lr = c.real("optim.enc_lr");
  r.encoder_optimizer.momentum = c.real("optim.enc_momentum");
  r.encoder_optimizer.weight_decay = c.real("optim.enc_weight_decay");

  r.warmup_iters = c.integer("train.warmup_iters");
  r.total_iters = c.integer("train.total_iters");
  r.batch_size = static_cast<int>(c.integer("train.batch_size"));
  r.ema_decay = c.real("train.ema_decay");
  r.checkpoint_every = c.integer("train.checkpoint_every");
  r.log_every = c.integer("train.log_every");
  r.max_retries = static_cast<int>(c.integer("train.max_retries"));
  r.record_wall_time = c.flag("train.record_wall_time");

  r.eval_samples = static_cast<int>(c.integer("eval.n_samples"));
  r.eval_ood = static_cast<int>(c.integer("eval.n_ood"));
  r.eval_use_ema = c.flag("eval.use_ema");
  r.heatmap_resolution = static_cast<int>(c.integer("eval.heatmap_resolution"));
  r.validate();
  return r;
}

void RunConfig::validate() const {
  if (model.d_z < 1) throw ConfigError("model.d_z must be positive");
  if (!(model.beta >= 0)) throw ConfigError("loss.beta must be nonnegative");
  if (!(loss.tau > 0)) throw ConfigError("loss.tau must be positive");
  if (!(loss.alpha >= 0)) throw ConfigError("loss.alpha must be nonnegative");
  sgld.validate();
  if (!(ebm_optimizer.lr >= 0) || !(encoder_optimizer.lr >= 0)) {
    throw ConfigError("learning rates must be nonnegative");
  }
  if (warmup_iters < 0 || total_iters < 0) throw ConfigError("iteration counts must be nonnegative");
  if (batch_size < 1) throw ConfigError("train.batch_size must be positive");
  if (!(ema_decay >= 0 && ema_decay <= 1)) throw ConfigError("train.ema_decay must lie in [0, 1]");
  if (checkpoint_every < 1 || log_every < 1) throw ConfigError("checkpoint/log periods must be positive");
  if (max_retries < 1) throw ConfigError("train.max_retries must be positive");
  if (buffer_capacity < 1) throw ConfigError("buffer.capacity must be positive");
  if (!(reinit_prob >= 0 && reinit_prob <= 1)) throw ConfigError("buffer.reinit_prob must lie in [0, 1]");
  if (eval_samples < 1 || eval_ood < 1) throw ConfigError("evaluation sizes must be positive");
}

RunContext make_context(const RunConfig& config) {
  RunContext ctx;
  ctx.dataset = dataset_spec(config.dataset_id, config.ood, config.image_dir);
  if (ctx.dataset.id == DatasetId::image_dir) {
    ctx.encoder_policy = AugmentationPolicy::image_default(ctx.dataset.shape);
  } else {
    ctx.encoder_policy = AugmentationPolicy::jitter_rotate(
        config.aug_jitter * ctx.dataset.data_scale, config.aug_rotation_deg);
    ctx.encoder_policy.clamp = std::make_pair(ctx.dataset.clamp_lo, ctx.dataset.clamp_hi);
  }
  ctx.sgld_policy = ctx.encoder_policy.scaled(config.sgld_aug_strength);
  return ctx;
}

void Adam::step(const std::vector<ParamRef>& params, double lr, const AdamConfig& cfg) {
  if (m.empty()) {
    for (const ParamRef& p : params) {
      m.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
      v.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    }
  }
  if (m.size() != params.size()) throw ConfigError("optimizer state does not match parameters");
  ++t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Matrix& g = *params[k].grad;
    m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
    v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    const Matrix m_hat = m[k] / c1;
    const Matrix v_hat = v[k] / c2;
    *params[k].value -= lr * m_hat.cwiseQuotient((v_hat.array().sqrt() + cfg.eps).matrix());
  }
}

void SgdMomentum::step(const std::vector<ParamRef>& params, double lr, const SgdConfig& cfg) {
  if (buf.empty()) {
    for (const ParamRef& p : params) buf.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
  }
  if (buf.size() != params.size()) throw ConfigError("optimizer state does not match parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Matrix g = *params[k].grad + cfg.weight_decay * *params[k].value;
    buf[k] = cfg.momentum * buf[k] + g;
    *params[k].value -= lr * buf[k];
  }
}

double warmup_lr(double base_lr, long iteration, long warmup_iters) {
  if (iteration < 0) throw ArgumentError("warmup_lr: negative iteration");
  if (warmup_iters <= 0) return base_lr;
  return base_lr * std::min(1.0, static_cast<double>(iteration) / static_cast<double>(warmup_iters));
}

void update_ema(std::vector<Matrix>& shadow, const std::vector<Matrix>& live, double decay) {
  if (shadow.size() != live.size()) throw ConfigError("EMA shadow and live parameters differ in count");
  for (std::size_t k = 0; k < live.size(); ++k) {
    if (shadow[k].rows() != live[k].rows() || shadow[k].cols() != live[k].cols()) {
      throw ConfigError("EMA shadow and live parameter shapes differ");
    }
    shadow[k] = decay * shadow[k] + (1.0 - decay) * live[k];
  }
}

TrainState initial_state(const RunConfig& config, const RunContext& context) {
  config.validate();
  TrainState s;
  Rng init_rng(config.seed, 0);
  EnergyModelConfig mc = config.model;
  mc.input = context.dataset.shape;
  mc.hidden = architecture(config, context.dataset, "model.hidden");
  s.ebm = EnergyModel(mc, init_rng);
  EncoderConfig ec = config.encoder;
  ec.input = context.dataset.shape;
  ec.hidden = architecture(config, context.dataset, "encoder.hidden");
  s.encoder = Encoder(ec, init_rng);
  s.buffer = ReplayBuffer(config.buffer_capacity, context.dataset.dim(), config.reinit_prob,
                          config.seed);
  s.ema = values_of(s.ebm.params());
  s.rng = Rng(config.seed, 3);
  s.data_rng = training_stream(config.seed);
  return s;
}

namespace {

Metrics attempt_step(TrainState& s, const Matrix& x, const RunConfig& config,
                     const RunContext& ctx) {
  const Eigen::Index n = x.rows();
  SgldConfig sgld = config.sgld;
  sgld.clamp_lo = ctx.dataset.clamp_lo;
  sgld.clamp_hi = ctx.dataset.clamp_hi;

  SampleResult fakes;
  try {
    fakes = sample_batch(s.ebm, &s.buffer, n, sgld, config.sgld_augment ? &ctx.sgld_policy : nullptr,
                         s.rng);
  } catch (const ChainDiverged& e) {
    throw TrainingDiverged(std::string("SGLD diverged: ") + e.what());
  }

  TrainBatch batch;
  batch.real_x = x;
  batch.fake_x = fakes.samples;
  try {
    batch.real_z = sample_latent(s.encoder, ctx.encoder_policy, x, s.rng);
    batch.fake_z = s.ebm.mode_latent(fakes.samples);
  } catch (const Error& e) {
    throw TrainingDiverged(std::string("latent extraction failed: ") + e.what());
  }
  batch.view1_x = ctx.encoder_policy.apply(x, s.rng);
  batch.view2_x = ctx.encoder_policy.apply(x, s.rng);

  s.ebm.zero_grad();
  const EbmLossStats stats = ebm_loss(batch, s.ebm, config.loss, true);
  s.encoder.zero_grad();
  const double le = encoder_loss(batch, s.encoder, config.loss, true);

  auto ebm_params = s.ebm.params();
  auto enc_params = s.encoder.params();
  if (!grads_finite(ebm_params) || !grads_finite(enc_params)) {
    throw TrainingDiverged("non-finite gradient");
  }

  const double lr = warmup_lr(config.ebm_optimizer.lr, s.iteration + 1, config.warmup_iters);
  s.ebm_optimizer.step(ebm_params, lr, config.ebm_optimizer);
  s.encoder_optimizer.step(enc_params, config.encoder_optimizer.lr, config.encoder_optimizer);
  s.ebm.spectral_step(1);
  for (const ParamRef& p : ebm_params) {
    if (!p.value->allFinite()) throw TrainingDiverged("non-finite parameter after update");
  }
  update_ema(s.ema, values_of(ebm_params), config.ema_decay);
  ++s.iteration;

  Metrics m;
  m.iter = s.iteration;
  m.loss_ebm = stats.loss;
  m.loss_le = le;
  m.energy_real_mean = stats.energy_real_mean;
  m.energy_fake_mean = stats.energy_fake_mean;
  m.buffer_size = s.buffer.size();
  m.fresh_starts = fakes.fresh;
  m.lr_ebm = lr;
  return m;
}

}  // namespace

Metrics train_step(TrainState& state, const Matrix& data_batch, const RunConfig& config,
                   const RunContext& context) {
  if (data_batch.rows() != config.batch_size) {
    throw ArgumentError("data batch has " + std::to_string(data_batch.rows()) +
                        " rows, expected " + std::to_string(config.batch_size));
  }
  const TrainState snapshot = state;
  std::string last_error;
  for (int attempt = 0; attempt < config.max_retries; ++attempt) {
    try {
      return attempt_step(state, data_batch, config, context);
    } catch (const TrainingDiverged& e) {
      last_error = e.what();
      // Roll back everything except the random streams, so the retry draws
      // fresh noise.
      Rng rng = state.rng;
      state = snapshot;
      state.rng = rng;
    }
  }
  state = snapshot;
  throw TrainingDiverged("training diverged at iteration " + std::to_string(state.iteration + 1) +
                         " after " + std::to_string(config.max_retries) +
                         " attempts: " + last_error);
}

EnergyModel ema_model(const TrainState& state) {
  EnergyModel model = state.ebm;
  auto params = model.params();
  if (params.size() != state.ema.size()) throw ConfigError("EMA shadow does not match model");
  for (std::size_t k = 0; k < params.size(); ++k) *params[k].value = state.ema[k];
  model.spectral_converge();
  return model;
}

SgldConfig evaluation_sampler(const RunConfig& config, const RunContext& context) {
  SgldConfig cfg = config.sgld;
  cfg.clamp_lo = context.dataset.clamp_lo;
  cfg.clamp_hi = context.dataset.clamp_hi;
  return cfg;
}

EnergyModel evaluation_model(const TrainState& state, const RunConfig& config) {
  return config.eval_use_ema ? ema_model(state) : state.ebm;
}

RunConfig load_checkpoint_config(const std::filesystem::path& dir) {
  Config c = Config::defaults();
  c.merge_file(dir / "config.txt");
  return RunConfig::from_config(c);
}

void save_checkpoint(const TrainState& state_in, const RunConfig& config,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  TrainState& state = const_cast<TrainState&>(state_in);  // params() hands out mutable views
  write_text(dir / "config.txt", config.source.snapshot());
  write_text(dir / "state.txt", "iteration " + std::to_string(state.iteration) + "\n");

  ArrayContainer params;
  params.set_meta("variant", to_string(state.ebm.config().variant));
  params.set_meta("projector", to_string(state.ebm.config().projector));
  params.set_meta("d_z", std::to_string(state.ebm.d_z()));
  params.set_meta("beta", format_real(state.ebm.beta()));
  params.set_meta("iteration", std::to_string(state.iteration));
  const auto ebm_params = state.ebm.params();
  for (const ParamRef& p : ebm_params) params.add(p.name, *p.value);
  for (const BufferRef& b : state.ebm.buffers()) params.add(b.name, *b.value);
  const auto enc_params = state.encoder.params();
  for (const ParamRef& p : enc_params) params.add(p.name, *p.value);
  for (std::size_t k = 0; k < ebm_params.size(); ++k) params.add("ema/" + ebm_params[k].name, state.ema[k]);
  params.save(dir / "params", DType::f64);

  ArrayContainer optim;
  optim.set_meta("adam_t", std::to_string(state.ebm_optimizer.t));
  for (std::size_t k = 0; k < state.ebm_optimizer.m.size(); ++k) {
    optim.add("adam.m/" + ebm_params[k].name, state.ebm_optimizer.m[k]);
    optim.add("adam.v/" + ebm_params[k].name, state.ebm_optimizer.v[k]);
  }
  for (std::size_t k = 0; k < state.encoder_optimizer.buf.size(); ++k) {
    optim.add("sgd.buf/" + enc_params[k].name, state.encoder_optimizer.buf[k]);
  }
  optim.save(dir / "optim", DType::f64);

  ArrayContainer buffer;
  buffer.set_meta("capacity", std::to_string(state.buffer.capacity()));
  buffer.set_meta("count", std::to_string(state.buffer.size()));
  buffer.add("states", state.buffer.contents());
  buffer.save(dir / "buffer", DType::f64);

  write_text(dir / "rng.txt", "main " + state.rng.serialize() + "\ndata " +
                                  state.data_rng.serialize() + "\nbuffer " +
                                  state.buffer.rng_state() + "\n");

  // Evaluation-ready model: EMA EBM parameters plus the encoder.
  ArrayContainer eval;
  eval.set_meta("variant", to_string(state.ebm.config().variant));
  eval.set_meta("projector", to_string(state.ebm.config().projector));
  eval.set_meta("d_z", std::to_string(state.ebm.d_z()));
  eval.set_meta("beta", format_real(state.ebm.beta()));
  EnergyModel ema = ema_model(state);
  for (const ParamRef& p : ema.params()) eval.add(p.name, *p.value);
  for (const BufferRef& b : ema.buffers()) eval.add(b.name, *b.value);
  for (const ParamRef& p : enc_params) eval.add(p.name, *p.value);
  eval.save(dir / "ema_model", DType::f64);
}

TrainState load_checkpoint(const std::filesystem::path& dir, RunConfig* config_out) {
  if (!std::filesystem::exists(dir / "config.txt") || !ArrayContainer::exists(dir / "params")) {
    throw DataError("no checkpoint at " + dir.string());
  }
  const RunConfig config = load_checkpoint_config(dir);
  const RunContext ctx = make_context(config);
  TrainState s = initial_state(config, ctx);

  const ArrayContainer params = ArrayContainer::load(dir / "params");
  auto assign = [](Matrix& dst, const Matrix& src, const std::string& name) {
    if (dst.rows() != src.rows() || dst.cols() != src.cols()) {
      throw DataError("checkpoint array '" + name + "' has the wrong shape");
    }
    dst = src;
  };
  auto ebm_params = s.ebm.params();
  for (const ParamRef& p : ebm_params) assign(*p.value, params.get(p.name), p.name);
  for (const BufferRef& b : s.ebm.buffers()) assign(*b.value, params.get(b.name), b.name);
  s.ebm.spectral_refresh();
  auto enc_params = s.encoder.params();
  for (const ParamRef& p : enc_params) assign(*p.value, params.get(p.name), p.name);
  for (std::size_t k = 0; k < ebm_params.size(); ++k) {
    assign(s.ema[k], params.get("ema/" + ebm_params[k].name), ebm_params[k].name);
  }

  const ArrayContainer optim = ArrayContainer::load(dir / "optim");
  s.ebm_optimizer.t = std::stol(optim.meta("adam_t").value_or("0"));
  if (s.ebm_optimizer.t > 0) {
    for (const ParamRef& p : ebm_params) {
      s.ebm_optimizer.m.push_back(optim.get("adam.m/" + p.name));
      s.ebm_optimizer.v.push_back(optim.get("adam.v/" + p.name));
    }
    for (const ParamRef& p : enc_params) s.encoder_optimizer.buf.push_back(optim.get("sgd.buf/" + p.name));
  }

  std::map<std::string, std::string> rng_lines;
  {
    std::istringstream is(read_text(dir / "rng.txt"));
    std::string line;
    while (std::getline(is, line)) {
      const auto sp = line.find(' ');
      if (sp != std::string::npos) rng_lines[line.substr(0, sp)] = line.substr(sp + 1);
    }
  }
  if (!rng_lines.count("main") || !rng_lines.count("data") || !rng_lines.count("buffer")) {
    throw DataError("incomplete rng state in " + dir.string());
  }
  s.rng.deserialize(rng_lines["main"]);
  s.data_rng.deserialize(rng_lines["data"]);
  const ArrayContainer buffer = ArrayContainer::load(dir / "buffer");
  s.buffer.restore(buffer.get("states"), rng_lines["buffer"]);
  s.iteration = std::stol(params.meta("iteration").value_or("0"));
  if (config_out) *config_out = config;
  return s;
}

void write_metrics_header(std::ostream& os) {
  os << "iter,loss_ebm,loss_le,energy_real_mean,energy_fake_mean,buffer_size,fresh_starts,lr_ebm,"
        "wall_time_s\n";
}

void write_metrics_row(std::ostream& os, const Metrics& m) {
  os << m.iter << ',' << format_real(m.loss_ebm) << ',' << format_real(m.loss_le) << ','
     << format_real(m.energy_real_mean) << ',' << format_real(m.energy_fake_mean) << ','
     << m.buffer_size << ',' << m.fresh_starts << ',' << format_real(m.lr_ebm) << ','
     << format_real(m.wall_time_s) << '\n';
}

TrainState train(const RunConfig& config, const std::filesystem::path& out,
                 const TrainOptions& options) {
  std::filesystem::create_directories(out);
  write_text(out / "config.txt", config.source.snapshot());
  const RunContext ctx = make_context(config);

  TrainState state;
  if (options.resume) {
    RunConfig stored;
    state = load_checkpoint(*options.resume, &stored);
  } else {
    state = initial_state(config, ctx);
    save_checkpoint(state, config, out / "checkpoints" / checkpoint_name(0));
  }

  // A resumed run keeps the rows up to its checkpoint and appends after them.
  const auto metrics_path = out / "metrics.csv";
  std::vector<std::string> kept;
  if (options.resume && std::filesystem::exists(metrics_path)) {
    std::istringstream previous(read_text(metrics_path));
    std::string line;
    std::getline(previous, line);
    while (std::getline(previous, line)) {
      if (!line.empty() && std::stol(line.substr(0, line.find(','))) <= state.iteration) {
        kept.push_back(line);
      }
    }
  }
  std::ofstream metrics(metrics_path);
  if (!metrics) throw DataError("cannot write metrics.csv");
  write_metrics_header(metrics);
  for (const std::string& line : kept) metrics << line << '\n';

  const auto start = std::chrono::steady_clock::now();
  while (state.iteration < config.total_iters) {
    const Matrix batch =
        ctx.dataset.id == DatasetId::image_dir
            ? epoch_batch(ctx.dataset, config.seed, state.iteration, config.batch_size)
            : generate(ctx.dataset, config.batch_size, state.data_rng);
    Metrics m = train_step(state, batch, config, ctx);
    if (config.record_wall_time) {
      m.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    if (m.iter % config.log_every == 0) write_metrics_row(metrics, m);
    if (state.iteration % config.checkpoint_every == 0) {
      save_checkpoint(state, config, out / "checkpoints" / checkpoint_name(state.iteration));
    }
    if (options.on_step && !options.on_step(m)) break;
  }
  metrics.flush();
  save_checkpoint(state, config, out / "final");
  return state;
}

}  // namespace clel
