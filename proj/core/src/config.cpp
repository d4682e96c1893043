#include "clel/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace clel {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const std::map<std::string, std::string>& registry() {
  static const std::map<std::string, std::string> keys = {
      {"seed", "0"},
      {"dataset.id", "gauss8"},
      {"dataset.ood", "uniform"},
      {"dataset.image_dir", ""},
      {"model.d_z", "128"},
      {"model.hidden", "128,128"},
      {"model.conv_channels", "16,32"},
      {"model.variant", "norm-direction"},
      {"model.projector", "mlp"},
      {"model.spectral_norm", "true"},
      {"model.unsquared_composition", "false"},
      {"encoder.hidden", "128,128"},
      {"loss.alpha", "1"},
      {"loss.beta", "0.01"},
      {"loss.tau", "0.2"},
      {"loss.generated_negatives", "true"},
      {"sgld.step_count", "60"},
      {"sgld.grad_coeff", "0.01"},
      {"sgld.noise_scale", "0.01"},
      {"sgld.eval_steps", "600"},
      {"sgld.augment", "true"},
      {"sgld.aug_strength", "0.5"},
      {"buffer.capacity", "10000"},
      {"buffer.reinit_prob", "0.001"},
      {"aug.jitter", "0.03"},
      {"aug.rotation_deg", "10"},
      {"optim.ebm_lr", "1e-4"},
      {"optim.ebm_beta1", "0"},
      {"optim.ebm_beta2", "0.999"},
      {"optim.ebm_eps", "1e-8"},
      {"optim.enc_lr", "0.03"},
      {"optim.enc_momentum", "0.9"},
      {"optim.enc_weight_decay", "5e-4"},
      {"train.warmup_iters", "2000"},
      {"train.total_iters", "5000"},
      {"train.batch_size", "64"},
      {"train.ema_decay", "0.999"},
      {"train.checkpoint_every", "1000"},
      {"train.log_every", "1"},
      {"train.max_retries", "3"},
      {"train.record_wall_time", "true"},
      {"eval.n_samples", "5000"},
      {"eval.n_ood", "2000"},
      {"eval.use_ema", "true"},
      {"eval.heatmap_resolution", "64"},
  };
  return keys;
}

}  // namespace

std::string format_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Config Config::defaults() {
  Config c;
  c.values_ = registry();
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  if (!registry().count(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' lacks '='");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void Config::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str(), path.string());
}

const std::string& Config::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

double Config::real(const std::string& key) const {
  const std::string& s = str(key);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("key '" + key + "' expects a number, got '" + s + "'");
  }
  return v;
}

long long Config::integer(const std::string& key) const {
  const std::string& s = str(key);
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("key '" + key + "' expects an integer, got '" + s + "'");
  }
  return v;
}

bool Config::flag(const std::string& key) const {
  const std::string& s = str(key);
  if (s == "true" || s == "on" || s == "1") return true;
  if (s == "false" || s == "off" || s == "0") return false;
  throw ConfigError("key '" + key + "' expects true/false, got '" + s + "'");
}

std::vector<int> Config::int_list(const std::string& key) const {
  std::vector<int> out;
  const std::string& s = str(key);
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    int v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size()) {
      throw ConfigError("key '" + key + "' expects a comma-separated integer list");
    }
    out.push_back(v);
  }
  return out;
}

std::string Config::snapshot() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
  return os.str();
}

std::uint64_t Config::hash() const { return std::hash<std::string>{}(snapshot()); }

}  // namespace clel
