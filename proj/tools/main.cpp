#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "clel/container.hpp"
#include "clel/evaluation.hpp"
#include "clel/trainer.hpp"
#include "svg_plot.hpp"

namespace fs = std::filesystem;
using namespace clel;

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kDiverged = 2, kMissingArtifact = 3 };

struct MissingArtifact : Error {
  using Error::Error;
};

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out = "runs/latest";
  std::optional<std::uint64_t> seed;
  std::string checkpoint;
  std::string resume;
};

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

// Base config (defaults or a checkpoint's snapshot), then --config, --set,
// --seed, CLEL_DATA_DIR.
Config build_config(const CommonOptions& opt, const Config& base) {
  Config c = base;
  if (!opt.config_path.empty()) {
    if (!fs::exists(opt.config_path)) throw MissingArtifact("config file not found: " + opt.config_path);
    c.merge_file(opt.config_path);
  }
  for (const std::string& o : opt.overrides) c.apply_override(o);
  if (opt.seed) c.set("seed", std::to_string(*opt.seed));
  if (c.str("dataset.image_dir").empty()) {
    if (const char* dir = std::getenv("CLEL_DATA_DIR")) c.set("dataset.image_dir", dir);
  }
  return c;
}

fs::path resolve_checkpoint(const std::string& path) {
  if (path.empty()) throw MissingArtifact("--checkpoint is required");
  const fs::path p(path);
  if (ArrayContainer::exists(p / "params")) return p;
  if (ArrayContainer::exists(p / "final" / "params")) return p / "final";
  throw MissingArtifact("no checkpoint at " + path);
}

struct LoadedRun {
  RunConfig config;
  RunContext context;
  TrainState state;
  EnergyModel model;
};

// Loads a checkpoint and re-applies command-line overrides on top of its
// snapshot. Architecture keys come from the checkpoint itself.
LoadedRun load_run(const CommonOptions& opt) {
  const fs::path dir = resolve_checkpoint(opt.checkpoint);
  LoadedRun run;
  RunConfig stored;
  run.state = load_checkpoint(dir, &stored);
  run.config = RunConfig::from_config(build_config(opt, stored.source));
  run.config.validate();
  run.context = make_context(run.config);
  run.model = evaluation_model(run.state, run.config);
  return run;
}

void start_run_dir(const fs::path& out, const Config& config) {
  fs::create_directories(out);
  write_text(out / "config.txt", config.snapshot());
}

std::vector<std::string> coordinate_header(int dim) {
  std::vector<std::string> h;
  for (int k = 0; k < dim; ++k) h.push_back("x" + std::to_string(k));
  return h;
}

void write_histogram(const fs::path& path, const Histogram& h) {
  Matrix rows(static_cast<Eigen::Index>(h.counts.size()), 2);
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    rows(static_cast<Eigen::Index>(b), 0) = h.edges[b];
    rows(static_cast<Eigen::Index>(b), 1) = h.counts[b];
  }
  write_csv(path, {"bin_edge", "count"}, rows);
}

void export_samples(const fs::path& out, const Matrix& samples, const RunContext& context) {
  ArrayContainer c;
  c.add("samples", samples);
  c.save(out / "samples", DType::f64);
  if (context.dataset.id == DatasetId::image_dir) {
    fs::create_directories(out / "samples_pgm");
    for (Eigen::Index i = 0; i < samples.rows(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "sample_%05ld.pgm", static_cast<long>(i));
      save_pgm(out / "samples_pgm" / name, samples.row(i), context.dataset.shape);
    }
  } else {
    write_csv(out / "samples.csv", coordinate_header(static_cast<int>(samples.cols())), samples);
  }
}

std::string format_fractions(const std::vector<double>& fr) {
  std::ostringstream os;
  for (std::size_t k = 0; k < fr.size(); ++k) os << (k ? " " : "") << format_real(fr[k]);
  return os.str();
}

// Encoder latents of held-out points nearest to one mode, aggregated.
int cmd_train(const CommonOptions& opt) {
  Config base = Config::defaults();
  if (!opt.resume.empty()) base = load_checkpoint_config(resolve_checkpoint(opt.resume)).source;
  const Config config = build_config(opt, base);
  RunConfig rc = RunConfig::from_config(config);
  rc.validate();
  start_run_dir(opt.out, config);
  TrainOptions options;
  if (!opt.resume.empty()) options.resume = resolve_checkpoint(opt.resume);
  const TrainState state = train(rc, opt.out, options);
  std::cout << "trained " << state.iteration << " iterations into " << opt.out << "\n";
  return kOk;
}

int cmd_sample(const CommonOptions& opt, long n_override) {
  LoadedRun run = load_run(opt);
  const fs::path out(opt.out);
  start_run_dir(out, run.config.source);
  const Eigen::Index n = n_override > 0 ? n_override : run.config.eval_samples;
  Rng rng(run.config.seed, 10);
  const Matrix samples =
      sample_batch(run.model, nullptr, n, evaluation_sampler(run.config, run.context), nullptr, rng, true)
          .samples;
  export_samples(out, samples, run.context);

  std::ostringstream summary;
  summary << "samples " << samples.rows() << "\n";
  Rng held = heldout_stream(run.config.seed);
  const Matrix reference = generate(run.context.dataset, n, held);
  const auto bw = default_bandwidths(samples, reference);
  summary << "mmd2 " << format_real(mmd(samples, reference, bw)) << "\n";
  summary << "energy_distance " << format_real(energy_distance(samples, reference)) << "\n";
  const Matrix centers = mode_centers(run.context.dataset);
  if (centers.rows() > 0) {
    summary << "mode_fractions " << format_fractions(mode_fractions(centers, samples)) << "\n";
  }
  if (run.context.dataset.dim() == 2) {
    write_csv(out / "energy_grid.csv", {"x0", "x1", "energy"},
              energy_grid(run.model, run.context.dataset.clamp_lo, run.context.dataset.clamp_hi,
                          run.config.heatmap_resolution));
  }
  // Cosine-similarity histograms of f, g(f/|f|) and h on held-out data.
  Rng hist_rng(run.config.seed, 12);
  const Matrix feats = run.model.features(reference);
  write_histogram(out / "hist_feature.csv", cosine_histogram(feats, 50, hist_rng));
  write_histogram(out / "hist_projected.csv",
                  cosine_histogram(run.model.mode_latent(reference), 50, hist_rng));
  write_histogram(out / "hist_encoder.csv",
                  cosine_histogram(run.state.encoder.encode(reference), 50, hist_rng));
  write_text(out / "summary.txt", summary.str());
  std::cout << summary.str();
  return kOk;
}

int cmd_ood(const CommonOptions& opt) {
  LoadedRun run = load_run(opt);
  const fs::path out(opt.out);
  start_run_dir(out, run.config.source);
  Rng held = heldout_stream(run.config.seed);
  const Matrix in_set = generate(run.context.dataset, run.config.eval_ood, held);
  const Matrix out_set = ood_counterpart(run.context.dataset, run.config.eval_ood, held);
  const OodReport r =
      ood_eval(run.model, run.state.encoder, in_set, out_set, run.config.source.hash(), run.config.seed);
  std::ofstream csv(out / "ood_report.csv");
  csv << "metric,value,n_in,n_out,config_hash,seed\n";
  for (const ScoreReport* s : {&r.joint, &r.marginal}) {
    csv << s->metric << ',' << format_real(s->value) << ',' << s->n_a << ',' << s->n_b << ','
        << s->config_hash << ',' << s->seed << '\n';
  }
  const std::string summary = "auroc_joint " + format_real(r.joint.value) + "\nauroc_marginal " +
                              format_real(r.marginal.value) + "\n";
  write_text(out / "summary.txt", summary);
  std::cout << summary;
  return kOk;
}

int cmd_conditional(const CommonOptions& opt, const std::vector<int>& modes, long n, bool compose) {
  LoadedRun run = load_run(opt);
  const fs::path out(opt.out);
  start_run_dir(out, run.config.source);
  Rng data_rng = heldout_stream(run.config.seed);
  std::vector<UnitLatent> concepts;
  for (int m : modes) concepts.push_back(mode_concept(run.state.encoder, run.context.dataset, m, data_rng));
  Rng rng(run.config.seed, 11);
  const SgldConfig cfg = evaluation_sampler(run.config, run.context);
  const Matrix samples = compose ? compositional_sample(run.model, concepts, cfg, n, rng)
                                 : conditional_sample(run.model, concepts.front(), cfg, n, rng);
  export_samples(out, samples, run.context);

  std::ostringstream summary;
  summary << "samples " << samples.rows() << "\n";
  const Matrix centers = mode_centers(run.context.dataset);
  const auto fr = mode_fractions(centers, samples);
  summary << "mode_fractions " << format_fractions(fr) << "\n";
  double on_target = 0.0;
  for (int m : modes) on_target += fr[static_cast<std::size_t>(m)];
  summary << "target_fraction " << format_real(compose ? on_target : fr[static_cast<std::size_t>(modes.front())])
          << "\n";
  Vector target = Vector::Zero(run.model.d_z());
  for (const UnitLatent& c : concepts) target += c.values();
  const Matrix g = run.model.mode_latent(samples);
  summary << "mean_alignment " << format_real((g * target).mean()) << "\n";
  write_text(out / "summary.txt", summary.str());
  std::cout << summary.str();
  return kOk;
}

struct Cell {
  std::string projector;
  bool negatives;
  double beta;
  std::string variant;
};

std::vector<Cell> ablation_grid() {
  std::vector<Cell> grid;
  for (const char* p : {"mlp", "linear", "identity"}) {
    for (bool neg : {true, false}) {
      for (double b : {0.0, 0.001, 0.01, 0.1}) {
        for (const char* v : {"norm-direction", "multi-head"}) grid.push_back({p, neg, b, v});
      }
    }
  }
  return grid;
}

int cmd_ablate(const CommonOptions& opt) {
  const Config base = build_config(opt, Config::defaults());
  RunConfig::from_config(base).validate();
  const fs::path out(opt.out);
  start_run_dir(out, base);
  const std::vector<Cell> grid = ablation_grid();

  int workers = 1;
  if (const char* w = std::getenv("CLEL_NUM_WORKERS")) workers = std::max(1, std::atoi(w));
  std::vector<std::string> rows(grid.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;

  auto run_cell = [&](std::size_t i) {
    const Cell& cell = grid[i];
    Config c = base;
    c.set("model.projector", cell.projector);
    c.set("loss.generated_negatives", cell.negatives ? "true" : "false");
    c.set("loss.beta", format_real(cell.beta));
    c.set("model.variant", cell.variant);
    const RunConfig rc = RunConfig::from_config(c);
    const fs::path dir = out / "cells" / ("cell_" + std::to_string(i));
    std::ostringstream row;
    row << i << ',' << cell.projector << ',' << (cell.negatives ? "on" : "off") << ','
        << format_real(cell.beta) << ',' << cell.variant << ',';
    try {
      const TrainState state = train(rc, dir);
      const RunContext ctx = make_context(rc);
      const EnergyModel model = evaluation_model(state, rc);
      Rng rng(rc.seed, 10);
      SgldConfig cfg = rc.sgld;
      cfg.clamp_lo = ctx.dataset.clamp_lo;
      cfg.clamp_hi = ctx.dataset.clamp_hi;
      const Matrix samples = sample_batch(model, nullptr, rc.eval_samples, cfg, nullptr, rng, true).samples;
      Rng held = heldout_stream(rc.seed);
      const Matrix reference = generate(ctx.dataset, rc.eval_samples, held);
      const Matrix in_set = generate(ctx.dataset, rc.eval_ood, held);
      const Matrix out_set = ood_counterpart(ctx.dataset, rc.eval_ood, held);
      const OodReport ood = ood_eval(model, state.encoder, in_set, out_set);
      row << format_real(mmd(samples, reference, default_bandwidths(samples, reference))) << ','
          << format_real(energy_distance(samples, reference)) << ',' << format_real(ood.joint.value)
          << ',' << format_real(ood.marginal.value) << ",ok";
    } catch (const TrainingDiverged&) {
      row << "nan,nan,nan,nan,diverged";
    } catch (const ChainDiverged&) {
      row << "nan,nan,nan,nan,diverged";
    } catch (const Error& e) {
      row << "nan,nan,nan,nan,error";
      std::lock_guard<std::mutex> lock(log_mutex);
      std::cerr << "cell " << i << ": " << e.what() << "\n";
    }
    rows[i] = row.str();
    std::lock_guard<std::mutex> lock(log_mutex);
    std::cout << "cell " << i + 1 << "/" << grid.size() << " done\n";
  };

  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < grid.size(); i = next++) run_cell(i);
    });
  }
  for (std::thread& t : pool) t.join();

  std::ofstream csv(out / "ablation.csv");
  csv << "cell,projector,generated_negatives,beta,variant,mmd2,energy_distance,auroc_joint,"
         "auroc_marginal,status\n";
  for (const std::string& r : rows) csv << r << '\n';
  std::cout << "wrote " << (out / "ablation.csv").string() << "\n";
  return kOk;
}

int cmd_plot(const std::string& input, const std::string& kind, const std::string& output,
             const std::string& x, const std::string& y) {
  if (!fs::exists(input)) throw MissingArtifact("no such file: " + input);
  std::vector<std::string> header;
  const Matrix rows = read_csv(input, &header);
  const std::string title = fs::path(input).filename().string();
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ConfigError("no column '" + name + "' in " + input);
    return static_cast<int>(it - header.begin());
  };
  if (kind == "scatter") {
    plot::scatter(rows, title, output);
  } else if (kind == "heatmap") {
    plot::heatmap(rows, title, output);
  } else if (kind == "histogram") {
    plot::histogram(rows, title, output);
  } else if (kind == "line") {
    plot::line(rows, column(x), column(y), title, output);
  } else {
    throw ConfigError("unknown plot kind '" + kind + "'");
  }
  std::cout << "wrote " << output << "\n";
  return kOk;
}

int cmd_flex(const CommonOptions& opt, int points, int d) {
  const Config config = build_config(opt, Config::defaults());
  const fs::path out(opt.out);
  start_run_dir(out, config);
  Rng rng(static_cast<std::uint64_t>(config.integer("seed")), 13);
  Vector f1(points);
  for (int i = 0; i < points; ++i) f1(i) = rng.uniform(-5.0, 5.0);
  const FlexibilityReport r = flexibility_check(f1, d);
  const std::string summary = "max_discrepancy " + format_real(r.max_discrepancy) + "\npassed " +
                              (r.passed ? "true" : "false") + "\n";
  write_text(out / "summary.txt", summary);
  std::cout << summary;
  return kOk;
}

void add_common(CLI::App* cmd, CommonOptions& opt, bool checkpoint, bool resume) {
  cmd->add_option("--config", opt.config_path, "Config file (key = value lines)");
  cmd->add_option("--set", opt.overrides, "Override a config key (key=value), repeatable");
  cmd->add_option("--out", opt.out, "Output directory");
  cmd->add_option("--seed", opt.seed, "Run seed");
  if (checkpoint) cmd->add_option("--checkpoint", opt.checkpoint, "Checkpoint or run directory");
  if (resume) cmd->add_option("--resume", opt.resume, "Checkpoint directory to resume from");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive latent-guided energy-based models"};
  app.require_subcommand(1);
  CommonOptions opt;

  auto* train_cmd = app.add_subcommand("train", "Train an EBM and its latent encoder");
  add_common(train_cmd, opt, false, true);

  long n = 0;
  auto* sample_cmd = app.add_subcommand("sample", "Draw unconditional samples from a checkpoint");
  add_common(sample_cmd, opt, true, false);
  sample_cmd->add_option("--n", n, "Number of samples (default eval.n_samples)");

  auto* ood_cmd = app.add_subcommand("ood-eval", "AUROC of the OOD score against the OOD set");
  add_common(ood_cmd, opt, true, false);

  std::vector<int> modes{0};
  long cond_n = 500;
  auto* cond_cmd = app.add_subcommand("cond-sample", "Sample conditioned on one mode's latent");
  add_common(cond_cmd, opt, true, false);
  cond_cmd->add_option("--mode", modes, "Mode index")->expected(1);
  cond_cmd->add_option("--n", cond_n, "Number of samples");

  auto* compose_cmd = app.add_subcommand("compose", "Sample from a sum of conditional energies");
  add_common(compose_cmd, opt, true, false);
  compose_cmd->add_option("--mode", modes, "Mode index, repeatable");
  compose_cmd->add_option("--n", cond_n, "Number of samples");

  auto* ablate_cmd = app.add_subcommand("ablate", "Run the projector/negatives/beta/variant grid");
  add_common(ablate_cmd, opt, false, false);

  std::string plot_input, plot_kind = "scatter", plot_output = "plot.svg", plot_x = "iter",
                          plot_y = "loss_ebm";
  auto* plot_cmd = app.add_subcommand("plot", "Render an SVG from a CSV artifact");
  plot_cmd->add_option("--input", plot_input, "CSV file")->required();
  plot_cmd->add_option("--kind", plot_kind, "scatter | heatmap | histogram | line");
  plot_cmd->add_option("--output", plot_output, "SVG file");
  plot_cmd->add_option("--x", plot_x, "x column for line plots");
  plot_cmd->add_option("--y", plot_y, "y column for line plots");

  int flex_points = 1000, flex_d = 5;
  auto* flex_cmd = app.add_subcommand("flex-check", "Check that a norm energy represents a scalar one");
  add_common(flex_cmd, opt, false, false);
  flex_cmd->add_option("--points", flex_points, "Grid size");
  flex_cmd->add_option("--d", flex_d, "Feature dimension");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(opt);
    if (sample_cmd->parsed()) return cmd_sample(opt, n);
    if (ood_cmd->parsed()) return cmd_ood(opt);
    if (cond_cmd->parsed()) return cmd_conditional(opt, modes, cond_n, false);
    if (compose_cmd->parsed()) return cmd_conditional(opt, modes, cond_n, true);
    if (ablate_cmd->parsed()) return cmd_ablate(opt);
    if (plot_cmd->parsed()) return cmd_plot(plot_input, plot_kind, plot_output, plot_x, plot_y);
    if (flex_cmd->parsed()) return cmd_flex(opt, flex_points, flex_d);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const ArgumentError& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return kConfigError;
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const ChainDiverged& e) {
    std::cerr << "sampler diverged: " << e.what() << "\n";
    return kDiverged;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return kMissingArtifact;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kMissingArtifact;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigError;
  }
  return kOk;
}
