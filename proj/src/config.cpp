#include "shadowdiff/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <variant>
#include <vector>

#include "json.hpp"
#include "shadowdiff/errors.hpp"
#include "shadowdiff/tensor.hpp"

#ifndef SHADOWDIFF_VERSION
#define SHADOWDIFF_VERSION "0.0.0"
#endif

namespace shadowdiff {

namespace {

using Field = std::variant<std::string RunConfig::*, long RunConfig::*, int RunConfig::*, std::uint64_t RunConfig::*,
                           double RunConfig::*, bool RunConfig::*>;

struct Key {
  const char* name;
  Field field;
  const char* help;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      {"data_dir", &RunConfig::data_dir, "directory holding the synthetic triplets and manifest.txt"},
      {"work_dir", &RunConfig::work_dir, "directory for checkpoints, logs, predictions and reports"},
      {"n_train", &RunConfig::n_train, "training triplets generated by gen-data"},
      {"n_test", &RunConfig::n_test, "held-out triplets generated by gen-data"},
      {"data_seed", &RunConfig::data_seed, "master seed of the data generator"},
      {"T", &RunConfig::T, "number of diffusion steps"},
      {"beta_min", &RunConfig::beta_min, "first per-step noise rate of the linear schedule"},
      {"beta_max", &RunConfig::beta_max, "last per-step noise rate of the linear schedule"},
      {"sample_steps", &RunConfig::sample_steps, "strided sampling steps S"},
      {"sample_seed", &RunConfig::sample_seed, "seed of the initial sampling noise"},
      {"diffusion_space", &RunConfig::diffusion_space, "latent (autoencoder) or pixel"},
      {"P", &RunConfig::P, "probability of a pseudo-input batch"},
      {"u_max", &RunConfig::u_max, "largest pseudo-input jump"},
      {"eta", &RunConfig::eta, "EMA smoothing factor"},
      {"ema_paper_literal", &RunConfig::ema_paper_literal, "weight the main network by eta instead of 1-eta"},
      {"per_sample_branch", &RunConfig::per_sample_branch, "draw the pseudo-input branch per sample, not per batch"},
      {"ch", &RunConfig::ch, "base channel width of the denoiser"},
      {"temb_dim", &RunConfig::temb_dim, "timestep embedding width"},
      {"use_mask", &RunConfig::use_mask, "feed an extra all-ones mask channel to the control branch"},
      {"model_seed", &RunConfig::model_seed, "denoiser initialisation seed"},
      {"ae_seed", &RunConfig::ae_seed, "autoencoder initialisation seed"},
      {"batch", &RunConfig::batch, "control-branch minibatch size"},
      {"weight_decay", &RunConfig::weight_decay, "AdamW decoupled weight decay"},
      {"ae_batch", &RunConfig::ae_batch, "autoencoder minibatch size"},
      {"ae_epochs", &RunConfig::ae_epochs, "autoencoder pretraining epochs"},
      {"ae_lr0", &RunConfig::ae_lr0, "autoencoder initial learning rate"},
      {"ae_lr1", &RunConfig::ae_lr1, "autoencoder final learning rate"},
      {"base_batch", &RunConfig::base_batch, "base denoiser minibatch size"},
      {"base_epochs", &RunConfig::base_epochs, "base denoiser pretraining epochs"},
      {"base_lr0", &RunConfig::base_lr0, "base denoiser initial learning rate"},
      {"base_lr1", &RunConfig::base_lr1, "base denoiser final learning rate"},
      {"control_steps", &RunConfig::control_steps, "control-branch optimiser steps"},
      {"control_lr0", &RunConfig::control_lr0, "control-branch initial learning rate"},
      {"control_lr1", &RunConfig::control_lr1, "control-branch final learning rate"},
      {"detail_batch", &RunConfig::detail_batch, "detail-decoder minibatch size"},
      {"detail_epochs", &RunConfig::detail_epochs, "detail-decoder training epochs"},
      {"detail_lr0", &RunConfig::detail_lr0, "detail-decoder initial learning rate"},
      {"detail_lr1", &RunConfig::detail_lr1, "detail-decoder final learning rate"},
      {"train_seed", &RunConfig::train_seed, "seed of minibatch order, timesteps and noise"},
  };
  return k;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

std::string format(const RunConfig& c, const Field& f) {
  return std::visit(
      [&](auto m) -> std::string {
        using V = std::decay_t<decltype(c.*m)>;
        if constexpr (std::is_same_v<V, std::string>) return c.*m;
        else if constexpr (std::is_same_v<V, bool>) return c.*m ? "true" : "false";
        else if constexpr (std::is_same_v<V, double>) {
          std::ostringstream os;
          os << std::setprecision(17) << c.*m;
          return os.str();
        } else return std::to_string(c.*m);
      },
      f);
}

}  // namespace

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(n_train >= 1 && n_test >= 1, "n_train and n_test must be >= 1");
  need(T >= 2, "T must be >= 2");
  need(beta_min > 0 && beta_min <= beta_max && beta_max < 1, "need 0 < beta_min <= beta_max < 1");
  need(sample_steps >= 1 && sample_steps <= T, "sample_steps must lie in [1, T]");
  need(diffusion_space == "latent" || diffusion_space == "pixel", "diffusion_space must be latent or pixel");
  need(P >= 0 && P <= 1, "P must lie in [0, 1]");
  need(u_max >= 1 && u_max <= T - 1, "u_max must lie in [1, T-1]");
  need(eta >= 0 && eta <= 1, "eta must lie in [0, 1]");
  need(ch >= 8 && ch % 8 == 0, "ch must be a positive multiple of 8");
  need(temb_dim >= 2 && temb_dim % 2 == 0, "temb_dim must be even");
  need(batch >= 1 && ae_batch >= 1 && base_batch >= 1 && detail_batch >= 1, "batch sizes must be >= 1");
  need(weight_decay >= 0, "weight_decay must be >= 0");
  need(ae_epochs >= 0 && base_epochs >= 0 && detail_epochs >= 0 && control_steps >= 0, "epochs/steps must be >= 0");
  for (double lr : {ae_lr0, ae_lr1, base_lr0, base_lr1, control_lr0, control_lr1, detail_lr0, detail_lr1})
    need(lr >= 0, "learning rates must be >= 0");
}

void apply_config_line(RunConfig& cfg, const std::string& raw) {
  std::string line = raw;
  if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
  line = trim(line);
  if (line.empty()) return;
  const auto eq = line.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + line + "'");
  const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
  for (const auto& k : keys()) {
    if (key != k.name) continue;
    std::visit(
        [&](auto m) {
          using V = std::decay_t<decltype(cfg.*m)>;
          if constexpr (std::is_same_v<V, std::string>) cfg.*m = val;
          else if constexpr (std::is_same_v<V, bool>) cfg.*m = parse_bool(key, val);
          else cfg.*m = parse_number<V>(key, val);
        },
        k.field);
    return;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) apply_config_line(cfg, line);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, ss.str());
  cfg.validate();
  return cfg;
}

std::string config_to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + "=" + format(cfg, k.field) + "\n";
  return out;
}

std::string config_to_json(const RunConfig& cfg) {
  nlohmann::ordered_json j;
  for (const auto& k : keys())
    std::visit([&](auto m) { j[k.name] = cfg.*m; }, k.field);
  j["config_hash"] = config_hash(cfg);
  j["code_version"] = code_version_hash();
  return j.dump(2);
}

std::string config_hash(const RunConfig& cfg) {
  const std::string t = config_to_text(cfg);
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(t.data(), t.size());
  return os.str();
}

std::string code_version_hash() {
  const std::string v = std::string("shadowdiff-") + SHADOWDIFF_VERSION;
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(v.data(), v.size());
  return os.str();
}

const std::map<std::string, std::string>& describe_config_keys() {
  static const std::map<std::string, std::string> m = [] {
    std::map<std::string, std::string> r;
    for (const auto& k : keys()) r[k.name] = k.help;
    return r;
  }();
  return m;
}

}  // namespace shadowdiff
