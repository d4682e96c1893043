#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "clel/trainer.hpp"
#include "helpers.hpp"

using namespace clel;
using namespace clel::testing;

namespace {

RunConfig tiny_config(long iters = 4) {
  Config c = Config::defaults();
  c.set("model.hidden", "16,16");
  c.set("encoder.hidden", "16");
  c.set("model.d_z", "8");
  c.set("train.batch_size", "8");
  c.set("buffer.capacity", "64");
  c.set("sgld.step_count", "5");
  c.set("sgld.eval_steps", "5");
  c.set("train.warmup_iters", "2");
  c.set("optim.ebm_lr", "1e-3");
  c.set("train.total_iters", std::to_string(iters));
  c.set("train.checkpoint_every", "3");
  c.set("train.record_wall_time", "false");
  c.set("seed", "5");
  return RunConfig::from_config(c);
}

std::vector<Matrix> snapshot(std::vector<ParamRef> params) {
  std::vector<Matrix> out;
  for (const ParamRef& p : params) out.push_back(*p.value);
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void check_same_state(TrainState& a, TrainState& b) {
  CHECK(a.iteration == b.iteration);
  CHECK(snapshot(a.ebm.params()) == snapshot(b.ebm.params()));
  CHECK(snapshot(a.encoder.params()) == snapshot(b.encoder.params()));
  CHECK(a.ema == b.ema);
  CHECK(a.buffer.contents() == b.buffer.contents());
  CHECK(a.buffer.rng_state() == b.buffer.rng_state());
  CHECK(a.rng.serialize() == b.rng.serialize());
  CHECK(a.data_rng.serialize() == b.data_rng.serialize());
  CHECK(a.ebm_optimizer.v == b.ebm_optimizer.v);
  CHECK(a.encoder_optimizer.buf == b.encoder_optimizer.buf);
}

}  // namespace

TEST_CASE("warmup schedule") {
  CHECK(warmup_lr(1e-4, 0, 2000) == 0.0);
  CHECK(warmup_lr(1e-4, 1000, 2000) == doctest::Approx(5e-5));
  CHECK(warmup_lr(1e-4, 2000, 2000) == 1e-4);
  CHECK(warmup_lr(1e-4, 9000, 2000) == 1e-4);
  CHECK(warmup_lr(1e-4, 3, 0) == 1e-4);
  CHECK_THROWS_AS(warmup_lr(1e-4, -1, 10), ArgumentError);
}

TEST_CASE("EMA update") {
  std::vector<Matrix> shadow{Matrix::Constant(1, 1, 1.0)};
  update_ema(shadow, {Matrix::Constant(1, 1, 3.0)}, 0.999);
  CHECK(shadow[0](0, 0) == doctest::Approx(1.002));
  update_ema(shadow, {Matrix::Constant(1, 1, 3.0)}, 1.0);
  CHECK(shadow[0](0, 0) == doctest::Approx(1.002));
  update_ema(shadow, {Matrix::Constant(1, 1, 7.0)}, 0.0);
  CHECK(shadow[0](0, 0) == 7.0);
  CHECK_THROWS_AS(update_ema(shadow, {}, 0.5), ConfigError);
  CHECK_THROWS_AS(update_ema(shadow, {Matrix::Zero(2, 1)}, 0.5), ConfigError);
}

TEST_CASE("Adam with zero first moment decay") {
  // One step with β1 = 0: m̂ = g, v̂ = g², so Δ = −lr·g/(|g| + ε).
  Matrix w(1, 2), g(1, 2);
  w << 1.0, -2.0;
  g << 0.5, -4.0;
  Adam adam;
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam.step({ParamRef{"w", &w, &g}}, cfg.lr, cfg);
  CHECK(w(0, 0) == doctest::Approx(1.0 - 0.1 * 0.5 / (0.5 + 1e-8)));
  CHECK(w(0, 1) == doctest::Approx(-2.0 + 0.1 * 4.0 / (4.0 + 1e-8)));
}

TEST_CASE("SGD momentum with weight decay") {
  Matrix w = Matrix::Constant(1, 1, 2.0), g = Matrix::Constant(1, 1, 1.0);
  SgdMomentum sgd;
  SgdConfig cfg{0.1, 0.9, 0.5};
  sgd.step({ParamRef{"w", &w, &g}}, cfg.lr, cfg);  // buf = 1 + 1 = 2
  CHECK(w(0, 0) == doctest::Approx(1.8));
  sgd.step({ParamRef{"w", &w, &g}}, cfg.lr, cfg);  // buf = 1.8 + 1.9 = 3.7
  CHECK(w(0, 0) == doctest::Approx(1.8 - 0.37));
}

TEST_CASE("zero learning rates leave parameters unchanged") {
  RunConfig cfg = tiny_config();
  cfg.ebm_optimizer.lr = 0.0;
  cfg.encoder_optimizer.lr = 0.0;
  cfg.encoder_optimizer.weight_decay = 0.0;
  const RunContext ctx = make_context(cfg);
  TrainState s = initial_state(cfg, ctx);
  const auto ebm0 = snapshot(s.ebm.params());
  const auto enc0 = snapshot(s.encoder.params());
  for (int k = 0; k < 3; ++k) train_step(s, generate(ctx.dataset, 8, s.data_rng), cfg, ctx);
  CHECK(snapshot(s.ebm.params()) == ebm0);
  CHECK(snapshot(s.encoder.params()) == enc0);
  CHECK(s.ema == ebm0);
  CHECK(s.iteration == 3);
  CHECK(s.buffer.size() == 24);
}

TEST_CASE("training steps are deterministic given the seed") {
  const RunConfig cfg = tiny_config();
  const RunContext ctx = make_context(cfg);
  TrainState a = initial_state(cfg, ctx), b = initial_state(cfg, ctx);
  for (int k = 0; k < 10; ++k) {
    const Metrics ma = train_step(a, generate(ctx.dataset, 8, a.data_rng), cfg, ctx);
    const Metrics mb = train_step(b, generate(ctx.dataset, 8, b.data_rng), cfg, ctx);
    CHECK(ma.loss_ebm == mb.loss_ebm);
    CHECK(ma.loss_le == mb.loss_le);
  }
  check_same_state(a, b);

  RunConfig other = cfg;
  other.seed = 6;
  TrainState c = initial_state(other, make_context(other));
  CHECK(snapshot(c.ebm.params()) != snapshot(a.ebm.params()));
}

TEST_CASE("EMA shadow matches a recomputation from the live history") {
  RunConfig cfg = tiny_config();
  cfg.ema_decay = 0.9;
  const RunContext ctx = make_context(cfg);
  TrainState s = initial_state(cfg, ctx);
  std::vector<Matrix> shadow = snapshot(s.ebm.params());
  for (int k = 0; k < 5; ++k) {
    train_step(s, generate(ctx.dataset, 8, s.data_rng), cfg, ctx);
    const auto live = snapshot(s.ebm.params());
    for (std::size_t p = 0; p < live.size(); ++p) shadow[p] = 0.9 * shadow[p] + 0.1 * live[p];
  }
  REQUIRE(shadow.size() == s.ema.size());
  for (std::size_t p = 0; p < shadow.size(); ++p) {
    CHECK((shadow[p] - s.ema[p]).cwiseAbs().maxCoeff() < 1e-14);
  }
  // Evaluation model carries the shadow values.
  EnergyModel e = ema_model(s);
  CHECK(snapshot(e.params()) == s.ema);
  cfg.eval_use_ema = false;
  EnergyModel live = evaluation_model(s, cfg);
  CHECK(snapshot(live.params()) == snapshot(s.ebm.params()));
}

TEST_CASE("a diverging step restores the state and reports") {
  const RunConfig cfg = tiny_config();
  const RunContext ctx = make_context(cfg);
  TrainState s = initial_state(cfg, ctx);
  train_step(s, generate(ctx.dataset, 8, s.data_rng), cfg, ctx);
  auto params = s.ebm.params();
  (*params.back().value)(0, 0) = std::nan("");
  const auto before = snapshot(s.encoder.params());
  const auto buffer = s.buffer.contents();
  const Matrix batch = generate(ctx.dataset, 8, s.data_rng);
  try {
    train_step(s, batch, cfg, ctx);
    FAIL("expected TrainingDiverged");
  } catch (const TrainingDiverged& e) {
    CHECK(std::string(e.what()).find("iteration 2") != std::string::npos);
  }
  CHECK(s.iteration == 1);
  CHECK(snapshot(s.encoder.params()) == before);
  CHECK(s.buffer.contents() == buffer);
  CHECK_THROWS_AS(train_step(s, Matrix::Zero(3, 2), cfg, ctx), ArgumentError);
}

TEST_CASE("train with zero iterations writes config and checkpoints") {
  TempDir dir("train0");
  const RunConfig cfg = tiny_config(0);
  TrainState s = train(cfg, dir.path());
  CHECK(s.iteration == 0);
  CHECK(std::filesystem::exists(dir.path() / "config.txt"));
  CHECK(std::filesystem::exists(dir.path() / "checkpoints" / "iter_0000000" / "state.txt"));
  CHECK(std::filesystem::exists(dir.path() / "final" / "state.txt"));
  Config back = Config::defaults();
  back.merge_file(dir.path() / "config.txt");
  CHECK(back.snapshot() == cfg.source.snapshot());
  std::istringstream metrics(slurp(dir.path() / "metrics.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(metrics, line)) ++lines;
  CHECK(lines == 1);
}

TEST_CASE("resume is bit-exact") {
  TempDir full("full"), part("part");
  const RunConfig cfg = tiny_config(6);
  TrainState a = train(cfg, full.path());
  CHECK(std::filesystem::exists(full.path() / "checkpoints" / "iter_0000003"));
  CHECK(std::filesystem::exists(full.path() / "checkpoints" / "iter_0000006"));

  TrainOptions stop;
  stop.on_step = [](const Metrics& m) { return m.iter < 4; };
  train(cfg, part.path(), stop);
  TrainOptions resume;
  resume.resume = part.path() / "checkpoints" / "iter_0000003";
  TrainState b = train(cfg, part.path(), resume);
  check_same_state(a, b);
  CHECK(slurp(full.path() / "metrics.csv") == slurp(part.path() / "metrics.csv"));

  RunConfig loaded;
  TrainState c = load_checkpoint(full.path() / "final", &loaded);
  check_same_state(a, c);
  CHECK(loaded.source.snapshot() == cfg.source.snapshot());
}

TEST_CASE("metrics log period and clock") {
  TempDir dir("metrics");
  RunConfig cfg = tiny_config(6);
  cfg.log_every = 2;
  cfg.record_wall_time = true;
  train(cfg, dir.path());
  std::vector<std::string> header;
  const Matrix rows = read_csv(dir.path() / "metrics.csv", &header);
  REQUIRE(rows.rows() == 3);
  CHECK(header.front() == "iter");
  CHECK(rows(0, 0) == 2);
  CHECK(rows(2, 0) == 6);
  const Eigen::Index wall = rows.cols() - 1;
  CHECK(header.back() == "wall_time_s");
  CHECK(rows(0, wall) >= 0);
  CHECK(rows(1, wall) >= rows(0, wall));
  CHECK(rows(2, wall) >= rows(1, wall));
}

TEST_CASE("config validation") {
  Config c = Config::defaults();
  c.set("train.checkpoint_every", "0");
  CHECK_THROWS_AS(RunConfig::from_config(c), ConfigError);
  c = Config::defaults();
  c.set("loss.tau", "0");
  CHECK_THROWS_AS(RunConfig::from_config(c), ConfigError);
  c = Config::defaults();
  c.set("model.variant", "three-head");
  CHECK_THROWS_AS(RunConfig::from_config(c), ConfigError);
}

TEST_CASE("brief training separates data from uniform noise") {
  RunConfig cfg = tiny_config(300);
  cfg.model.beta = 0.01;
  const RunContext ctx = make_context(cfg);
  TrainState s = initial_state(cfg, ctx);
  Rng probe(99);
  const Matrix data = generate(ctx.dataset, 500, probe);
  const Matrix noise = ood_counterpart(ctx.dataset, 500, probe);
  while (s.iteration < cfg.total_iters) {
    train_step(s, generate(ctx.dataset, cfg.batch_size, s.data_rng), cfg, ctx);
  }
  CHECK(s.ebm.marginal_energy(data).mean() < s.ebm.marginal_energy(noise).mean());

  SgldConfig sc = cfg.sgld;
  sc.clamp_lo = ctx.dataset.clamp_lo;
  sc.clamp_hi = ctx.dataset.clamp_hi;
  sc.eval_steps = 100;
  const Matrix samples = sample_batch(s.ebm, nullptr, 500, sc, nullptr, probe, true).samples;
  CHECK(s.ebm.marginal_energy(samples).mean() < s.ebm.marginal_energy(noise).mean());
}
