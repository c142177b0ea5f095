// shadowdiff command-line driver.
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "shadowdiff/config.hpp"
#include "shadowdiff/image_io.hpp"
#include "shadowdiff/metrics.hpp"
#include "shadowdiff/pipeline.hpp"

namespace fs = std::filesystem;
using namespace shadowdiff;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  bool quiet = false;

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    for (const auto& o : overrides) apply_config_line(cfg, o);
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_path, "key=value config file")->check(CLI::ExistingFile);
  app->add_option("-s,--set", c.overrides, "override a config key (key=value), repeatable");
  app->add_flag("-q,--quiet", c.quiet, "only write the log file");
}

std::string strip_role(const std::string& stem) {
  for (const char* role : {"_shadow", "_pred", "_free"})
    if (stem.ends_with(role)) return stem.substr(0, stem.size() - std::string(role).size());
  return stem;
}

void print_report(const std::string& name, const EvalReport& r) {
  auto f = [](std::optional<double> v, int prec) {
    if (!v) return std::string("n/a");
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << *v;
    return os.str();
  };
  std::cout << name << ": n=" << r.n_images << " psnr=" << f(r.psnr, 4) << " psnr_s=" << f(r.psnr_s, 4)
            << " psnr_ns=" << f(r.psnr_ns, 4) << " ssim=" << f(r.ssim, 4) << " ssim_s=" << f(r.ssim_s, 4)
            << " ssim_ns=" << f(r.ssim_ns, 4) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Residual-generation diffusion for shadow removal at desk scale"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen-data", "generate synthetic shadow triplets");
  add_common(gen, common);
  std::optional<long> n_train, n_test;
  std::optional<std::uint64_t> data_seed;
  std::string data_out;
  gen->add_option("--n-train", n_train, "training triplets");
  gen->add_option("--n-test", n_test, "held-out triplets");
  gen->add_option("--seed", data_seed, "master seed");
  gen->add_option("-o,--out", data_out, "output directory (default: data_dir)");

  auto* pae = app.add_subcommand("pretrain-ae", "stage 1: autoencoder reconstruction pretraining");
  add_common(pae, common);
  auto* pbase = app.add_subcommand("pretrain-base", "stage 2: base denoiser noise-prediction pretraining");
  add_common(pbase, common);

  auto* train = app.add_subcommand("train", "stage 3: control branch with self-enhancement, then the detail decoder");
  add_common(train, common);
  std::string variant = "full";
  bool skip_detail = false, only_detail = false;
  train->add_option("--variant", variant, "full | no-ema | ddim-mode");
  train->add_flag("--skip-detail", skip_detail, "do not (re)train the detail decoder");
  train->add_flag("--only-detail", only_detail, "train the detail decoder only");

  auto* samp = app.add_subcommand("sample", "restore a shadow image or a directory of *_shadow.png files");
  add_common(samp, common);
  std::string input, output, decoder = "detail";
  std::optional<int> steps;
  std::optional<std::uint64_t> sample_seed;
  samp->add_option("-i,--input", input, "PNG file or directory")->required()->check(CLI::ExistingPath);
  samp->add_option("-o,--out", output, "output PNG (file input) or directory")->required();
  samp->add_option("--steps", steps, "strided sampling steps S");
  samp->add_option("--seed", sample_seed, "sampling seed");
  samp->add_option("--variant", variant, "control checkpoint to use");
  samp->add_option("--decoder", decoder, "detail | base");

  auto* ev = app.add_subcommand("eval", "PSNR/SSIM, whole image and shadow / non-shadow regions");
  std::string pred_dir, gt_dir, mask_dir, csv_out, json_out;
  ev->add_option("--pred", pred_dir, "predictions ({key}_pred.png)")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--gt", gt_dir, "ground truth ({key}_free.png)")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--mask", mask_dir, "masks ({key}_mask.png), default: --gt");
  ev->add_option("--csv", csv_out, "per-image CSV output");
  ev->add_option("--json", json_out, "aggregate JSON output");

  auto* abl = app.add_subcommand("ablate", "train and evaluate full / ddim-mode / no-ema / base-decoder");
  add_common(abl, common);

  auto* show = app.add_subcommand("show-config", "print the resolved config, or documented keys with --keys");
  add_common(show, common);
  bool keys_only = false;
  show->add_flag("--keys", keys_only, "list keys with descriptions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (ev->parsed()) {
      const auto res = evaluate_dir(pred_dir, gt_dir, mask_dir.empty() ? gt_dir : mask_dir);
      if (!csv_out.empty()) write_scores_csv(csv_out, res.rows);
      if (!json_out.empty()) std::ofstream(json_out) << report_json(res.report) << "\n";
      print_report("eval", res.report);
      return 0;
    }

    RunConfig cfg = common.resolve();
    if (show->parsed()) {
      if (keys_only)
        for (const auto& [k, d] : describe_config_keys()) std::cout << k << "\t" << d << "\n";
      else
        std::cout << config_to_text(cfg);
      return 0;
    }
    if (gen->parsed()) {
      if (n_train) cfg.n_train = *n_train;
      if (n_test) cfg.n_test = *n_test;
      if (data_seed) cfg.data_seed = *data_seed;
      if (!data_out.empty()) cfg.data_dir = data_out;
    }
    if (samp->parsed()) {
      if (steps) cfg.sample_steps = *steps;
      if (sample_seed) cfg.sample_seed = *sample_seed;
    }
    cfg.validate();
    Pipeline pipe(cfg, common.quiet ? nullptr : &std::cout);

    if (gen->parsed()) {
      pipe.gen_data();
    } else if (pae->parsed()) {
      pipe.pretrain_ae();
    } else if (pbase->parsed()) {
      pipe.pretrain_base();
    } else if (train->parsed()) {
      if (!only_detail) pipe.train_control(parse_variant(variant));
      if (!skip_detail) pipe.train_detail();
    } else if (samp->parsed()) {
      if (decoder != "detail" && decoder != "base") throw ConfigError("--decoder must be detail or base");
      const DecoderKind dk = decoder == "base" ? DecoderKind::base : DecoderKind::detail;
      pipe.load_stages(parse_variant(variant));
      std::vector<std::pair<fs::path, fs::path>> jobs;
      if (fs::is_directory(input)) {
        fs::create_directories(output);
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(input))
          if (e.path().filename().string().ends_with("_shadow.png")) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("no *_shadow.png files in " + input);
        for (const auto& f : files) jobs.emplace_back(f, fs::path(output) / (strip_role(f.stem().string()) + "_pred.png"));
      } else {
        fs::path out = output;
        if (out.extension() != ".png") {
          fs::create_directories(out);
          out /= strip_role(fs::path(input).stem().string()) + "_pred.png";
        }
        jobs.emplace_back(input, out);
      }
      for (const auto& [in, out] : jobs) {
        write_png(out, pipe.restore(read_png(in), dk));
        if (!common.quiet) std::cout << in.string() << " -> " << out.string() << "\n";
      }
    } else if (abl->parsed()) {
      const auto rows = pipe.ablate();
      std::cout << ablation_markdown(rows);
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NonFiniteError& e) {
    std::cerr << "numeric divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
