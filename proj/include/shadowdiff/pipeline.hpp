#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "shadowdiff/autoencoder.hpp"
#include "shadowdiff/checkpoint.hpp"
#include "shadowdiff/config.hpp"
#include "shadowdiff/denoiser.hpp"
#include "shadowdiff/diffusion.hpp"
#include "shadowdiff/metrics.hpp"
#include "shadowdiff/synthdata.hpp"

namespace shadowdiff {

/// Control-branch training variants of the ablation matrix.
enum class Variant { full, no_ema, ddim };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& s);

/// Which image decoder turns sampled latents into pixels.
enum class DecoderKind { detail, base };

struct AeReport {
  std::vector<double> epoch_loss;
  double heldout_psnr = 0;  // decode_base(encode(x)) vs x on the test split
};

struct BaseReport {
  std::vector<double> epoch_loss;
  double heldout_initial = 0;
  double heldout_final = 0;
};

struct ControlReport {
  double first_loss = 0;
  double last_loss = 0;  // mean over the final 10% of steps
  long pseudo_steps = 0;
};

struct DetailReport {
  std::vector<double> epoch_loss;
  double heldout_initial = 0;
  double heldout_final = 0;
  double detail_psnr = 0;  // decode_detail(encode(free), shadow) vs free
  double base_psnr = 0;    // decode_base(encode(free)) vs free
};

struct AblationRow {
  std::string name;
  EvalReport report;
};

/// Staged training, sampling and evaluation over one work directory.
///
/// Artifacts: ae.ckpt, base.ckpt, control_<variant>.ckpt, detail.ckpt, pred_<name>/ PNGs,
/// eval_<name>.csv/json, ablation.json/md, config.txt/json. Every checkpoint embeds the resolved
/// config and its hash.
class Pipeline {
 public:
  explicit Pipeline(RunConfig cfg, std::ostream* log = nullptr);
  ~Pipeline();

  const RunConfig& config() const { return cfg_; }
  const ScheduleTable& schedule() const { return sched_; }
  std::filesystem::path work_dir() const { return cfg_.work_dir; }
  bool pixel_space() const { return cfg_.diffusion_space == "pixel"; }

  void gen_data();
  AeReport pretrain_ae();
  BaseReport pretrain_base();
  ControlReport train_control(Variant v);
  DetailReport train_detail();

  /// Loads whichever stage checkpoints exist in the work directory.
  void load_stages(std::optional<Variant> control = std::nullopt);

  /// Full inference for one shadow image.
  Tensor<float> restore(const Tensor<float>& shadow, DecoderKind dec = DecoderKind::detail);

  /// Restores every test image, writes `{key}_pred.png` into out_dir and scores against the ground truth.
  EvalResult run_test_split(Variant v, DecoderKind dec, const std::filesystem::path& out_dir);

  /// Input shadow images scored against ground truth (the do-nothing baseline).
  EvalResult score_inputs();

  /// Trains every variant (reusing existing checkpoints) and evaluates the matrix
  /// full / ddim-mode / no-ema / base-decoder plus the input baseline.
  std::vector<AblationRow> ablate();

  std::string meta_text() const;

 private:
  struct Models;
  struct Data;

  std::filesystem::path path(const std::string& f) const { return std::filesystem::path(cfg_.work_dir) / f; }
  std::filesystem::path control_ckpt(Variant v) const { return path("control_" + variant_name(v) + ".ckpt"); }
  void log(const std::string& line) const;
  const std::vector<ImageTriplet>& split(const std::string& name);
  Tensor<float> to_latent(const Tensor<float>& img, Encoded<float>* enc = nullptr);
  Tensor<float> from_latent(const Tensor<float>& z, const Tensor<float>& shadow, const Encoded<float>* enc,
                            DecoderKind dec);
  void require_file(const std::filesystem::path& p, const std::string& stage) const;
  Checkpoint new_checkpoint() const;
  void ensure_base_loaded();
  void ensure_ae_loaded();

  RunConfig cfg_;
  ScheduleTable sched_;
  std::ostream* log_;
  std::unique_ptr<Models> m_;
  std::unique_ptr<Data> d_;
};

/// Markdown table of an ablation run.
std::string ablation_markdown(const std::vector<AblationRow>& rows);
std::string ablation_json(const std::vector<AblationRow>& rows, const RunConfig& cfg);

}  // namespace shadowdiff
