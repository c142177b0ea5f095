#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace shadowdiff {

/// Every knob of a run. Defaults are the desk-scale recipe; `describe_config_keys` documents each key.
struct RunConfig {
  // paths
  std::string data_dir = "data";
  std::string work_dir = "run";

  // data
  long n_train = 500;
  long n_test = 50;
  std::uint64_t data_seed = 1234;

  // schedules and sampling
  int T = 100;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  int sample_steps = 10;
  std::uint64_t sample_seed = 5;
  std::string diffusion_space = "latent";  // latent | pixel

  // self-enhancement
  double P = 0.2;
  int u_max = 50;
  double eta = 0.999;
  bool ema_paper_literal = false;
  bool per_sample_branch = false;

  // networks
  int ch = 32;
  int temb_dim = 128;
  bool use_mask = false;
  std::uint64_t model_seed = 1;
  std::uint64_t ae_seed = 7;

  // optimisation
  int batch = 8;
  double weight_decay = 0.01;
  int ae_batch = 1;
  int ae_epochs = 12;
  double ae_lr0 = 1e-3;
  double ae_lr1 = 1e-5;
  int base_batch = 8;
  int base_epochs = 60;
  double base_lr0 = 2e-3;
  double base_lr1 = 1e-5;
  long control_steps = 3000;
  double control_lr0 = 1e-3;
  double control_lr1 = 1e-6;
  int detail_batch = 1;
  int detail_epochs = 12;
  double detail_lr0 = 1e-3;
  double detail_lr1 = 1e-6;
  std::uint64_t train_seed = 3;

  void validate() const;
};

/// Applies `key=value` assignments; unknown keys and unparsable values throw ConfigError.
void apply_config_line(RunConfig& cfg, const std::string& line);
void apply_config_text(RunConfig& cfg, const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Flat key=value text with every key, in declaration order; reloading it reproduces the config.
std::string config_to_text(const RunConfig& cfg);
std::string config_to_json(const RunConfig& cfg);
/// FNV-1a hash of config_to_text, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

/// Hash of the library version string, embedded next to the config hash in artifacts.
std::string code_version_hash();

/// key -> one-line description.
const std::map<std::string, std::string>& describe_config_keys();

}  // namespace shadowdiff
