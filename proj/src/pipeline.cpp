#include "shadowdiff/pipeline.hpp"

#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "json.hpp"
#include "shadowdiff/image_io.hpp"
#include "shadowdiff/training.hpp"

namespace shadowdiff {

namespace fs = std::filesystem;

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_ema: return "no-ema";
    case Variant::ddim: return "ddim-mode";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no-ema") return Variant::no_ema;
  if (s == "ddim-mode" || s == "ddim") return Variant::ddim;
  throw ConfigError("unknown variant '" + s + "' (full, no-ema, ddim-mode)");
}

struct Pipeline::Models {
  ToyAutoencoder<float> ae;
  UNet<float> base;
  std::unique_ptr<ControlledDenoiser<float>> net;
  bool ae_ready = false, base_ready = false, detail_ready = false;
  Variant variant = Variant::full;
};

struct Pipeline::Data {
  std::map<std::string, std::vector<ImageTriplet>> splits;
};

Pipeline::Pipeline(RunConfig cfg, std::ostream* log)
    : cfg_(std::move(cfg)), log_(log), m_(std::make_unique<Models>()), d_(std::make_unique<Data>()) {
  cfg_.validate();
  sched_ = ScheduleTable::make(cfg_.T, cfg_.beta_min, cfg_.beta_max);
  AutoencoderConfig ac;
  ac.seed = cfg_.ae_seed;
  m_->ae = ToyAutoencoder<float>(ac);
  UNetConfig uc;
  uc.latent_ch = pixel_space() ? 3 : ac.latent_ch;
  uc.ch = std::size_t(cfg_.ch);
  uc.temb_dim = std::size_t(cfg_.temb_dim);
  uc.seed = cfg_.model_seed;
  m_->base = UNet<float>(uc);
  fs::create_directories(cfg_.work_dir);
  std::ofstream(path("config.txt")) << config_to_text(cfg_);
  std::ofstream(path("config.json")) << config_to_json(cfg_) << "\n";
}

Pipeline::~Pipeline() = default;

void Pipeline::log(const std::string& line) const {
  if (log_) *log_ << line << std::endl;
  std::ofstream(path("pipeline.log"), std::ios::app) << line << "\n";
}

std::string Pipeline::meta_text() const {
  return config_to_text(cfg_) + "config_hash=" + config_hash(cfg_) + "\ncode_version=" + code_version_hash() + "\n";
}

Checkpoint Pipeline::new_checkpoint() const {
  Checkpoint c;
  c.schedule = sched_;
  c.meta = meta_text();
  return c;
}

void Pipeline::require_file(const fs::path& p, const std::string& stage) const {
  if (!fs::exists(p)) throw DataError("missing " + p.string() + "; run `" + stage + "` first");
}

const std::vector<ImageTriplet>& Pipeline::split(const std::string& name) {
  auto it = d_->splits.find(name);
  if (it != d_->splits.end()) return it->second;
  auto data = load_split(cfg_.data_dir, name);
  if (data.empty()) throw DataError("split '" + name + "' is empty in " + cfg_.data_dir);
  return d_->splits[name] = std::move(data);
}

namespace {

Checkpoint read_matching(const fs::path& p, const ScheduleTable& s) {
  Checkpoint c = read_checkpoint(p);
  if (!(c.schedule == s)) throw ConfigError("schedule stored in " + p.string() + " differs from the configured one");
  return c;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "n/a"; }

}  // namespace

void Pipeline::ensure_ae_loaded() {
  if (pixel_space() || m_->ae_ready) return;
  require_file(path("ae.ckpt"), "pretrain-ae");
  auto store = m_->ae.base_params();
  read_matching(path("ae.ckpt"), sched_).load_store(store);
  m_->ae.reset_controller();
  m_->ae_ready = true;
  if (fs::exists(path("detail.ckpt"))) {
    auto ds = m_->ae.detail_params();
    read_matching(path("detail.ckpt"), sched_).load_store(ds);
    m_->detail_ready = true;
  }
}

void Pipeline::ensure_base_loaded() {
  if (m_->base_ready) return;
  require_file(path("base.ckpt"), "pretrain-base");
  auto store = m_->base.params();
  read_matching(path("base.ckpt"), sched_).load_store(store);
  m_->base_ready = true;
}

void Pipeline::load_stages(std::optional<Variant> control) {
  ensure_ae_loaded();
  ensure_base_loaded();
  const Variant v = control.value_or(Variant::full);
  require_file(control_ckpt(v), "train");
  m_->net = std::make_unique<ControlledDenoiser<float>>(m_->base, cfg_.use_mask);
  auto store = m_->net->trainable_params();
  read_matching(control_ckpt(v), sched_).load_store(store);
  m_->variant = v;
}

Tensor<float> Pipeline::to_latent(const Tensor<float>& img, Encoded<float>* enc) {
  if (pixel_space()) {
    Tensor<float> z = img;
    for (auto& v : z.vec()) v = 2.0f * v - 1.0f;
    return z;
  }
  Encoded<float> e = m_->ae.encode(img);
  Tensor<float> z = e.latent;
  if (enc) *enc = std::move(e);
  return z;
}

Tensor<float> Pipeline::from_latent(const Tensor<float>& z, const Tensor<float>& shadow, const Encoded<float>* enc,
                                    DecoderKind dec) {
  if (pixel_space()) {
    Tensor<float> img = z;
    for (auto& v : img.vec()) v = 0.5f * (v + 1.0f);
    return img;
  }
  if (dec == DecoderKind::base) return m_->ae.decode_base(z);
  if (!m_->detail_ready) throw DataError("detail decoder not trained; run `train` first");
  return enc ? m_->ae.decode_detail(z, shadow, *enc) : m_->ae.decode_detail(z, shadow);
}

void Pipeline::gen_data() {
  DatasetSpec spec;
  spec.n_train = std::size_t(cfg_.n_train);
  spec.n_test = std::size_t(cfg_.n_test);
  spec.seed = cfg_.data_seed;
  gen_dataset(spec, cfg_.data_dir);
  d_->splits.clear();
  log("gen-data: " + std::to_string(spec.n_train) + " train / " + std::to_string(spec.n_test) + " test triplets in " +
      cfg_.data_dir);
}

AeReport Pipeline::pretrain_ae() {
  AeReport rep;
  if (pixel_space()) {
    log("pretrain-ae: skipped (pixel space)");
    return rep;
  }
  const auto& train = split("train");
  std::vector<Tensor<float>> images;
  images.reserve(2 * train.size());
  for (const auto& tr : train) {
    images.push_back(tr.shadow_free);
    images.push_back(tr.shadow);
  }
  AutoencoderConfig ac;
  ac.seed = cfg_.ae_seed;
  m_->ae = ToyAutoencoder<float>(ac);
  PretrainConfig pc{cfg_.ae_epochs, cfg_.ae_batch, cfg_.ae_lr0, cfg_.ae_lr1, cfg_.weight_decay,
                    derive_seed(cfg_.train_seed, 0xae)};
  rep.epoch_loss = shadowdiff::pretrain_autoencoder<float>(m_->ae, images, pc, [&](int ep, double loss, double lr) {
    log("pretrain-ae epoch " + std::to_string(ep) + " lr " + fmt(lr, 6) + " loss " + fmt(loss, 6));
  });
  std::vector<Tensor<float>> free;
  for (const auto& tr : train) free.push_back(tr.shadow_free);
  calibrate_latent_scale<float>(m_->ae, free);
  m_->ae.reset_controller();

  double sum = 0;
  const auto& test = split("test");
  for (const auto& tr : test)
    sum += psnr(quantize8(m_->ae.decode_base(m_->ae.encode(tr.shadow_free).latent)), tr.shadow_free);
  rep.heldout_psnr = sum / double(test.size());
  log("pretrain-ae: held-out reconstruction PSNR " + fmt(rep.heldout_psnr) + " dB, latent scale " +
      fmt(m_->ae.latent_scale.value[0], 6));

  Checkpoint c = new_checkpoint();
  c.add_store(m_->ae.base_params());
  write_checkpoint(path("ae.ckpt"), c);
  m_->ae_ready = true;
  m_->detail_ready = false;
  return rep;
}

BaseReport Pipeline::pretrain_base() {
  ensure_ae_loaded();
  std::vector<Tensor<float>> train, test;
  for (const auto& tr : split("train")) train.push_back(to_latent(tr.shadow_free));
  for (const auto& tr : split("test")) test.push_back(to_latent(tr.shadow_free));
  m_->base = UNet<float>(m_->base.config());
  const std::uint64_t eval_seed = derive_seed(cfg_.train_seed, 0xe7a1);
  BaseReport rep;
  rep.heldout_initial = base_noise_loss<float>(m_->base, test, sched_, eval_seed);
  PretrainConfig pc{cfg_.base_epochs, cfg_.base_batch, cfg_.base_lr0, cfg_.base_lr1, cfg_.weight_decay,
                    derive_seed(cfg_.train_seed, 0xba5e)};
  rep.epoch_loss = shadowdiff::pretrain_base<float>(m_->base, train, sched_, pc, [&](int ep, double loss, double lr) {
    log("pretrain-base epoch " + std::to_string(ep) + " lr " + fmt(lr, 6) + " loss " + fmt(loss, 6));
  });
  rep.heldout_final = base_noise_loss<float>(m_->base, test, sched_, eval_seed);
  log("pretrain-base: held-out noise loss " + fmt(rep.heldout_initial, 6) + " -> " + fmt(rep.heldout_final, 6));
  Checkpoint c = new_checkpoint();
  c.add_store(m_->base.params());
  write_checkpoint(path("base.ckpt"), c);
  m_->base_ready = true;
  return rep;
}

ControlReport Pipeline::train_control(Variant v) {
  ensure_ae_loaded();
  ensure_base_loaded();
  std::vector<SamplePair<float>> pairs;
  for (const auto& tr : split("train"))
    pairs.push_back(SamplePair<float>::from_latents(to_latent(tr.shadow), to_latent(tr.shadow_free)));

  m_->net = std::make_unique<ControlledDenoiser<float>>(m_->base, cfg_.use_mask);
  m_->variant = v;
  ControlTrainConfig tc;
  tc.self_enhance.P = v == Variant::no_ema ? 0.0 : cfg_.P;
  tc.self_enhance.u_max = cfg_.u_max;
  tc.self_enhance.eta = cfg_.eta;
  tc.self_enhance.paper_literal = cfg_.ema_paper_literal;
  tc.self_enhance.per_sample_branch = cfg_.per_sample_branch;
  tc.total_steps = std::max(1L, cfg_.control_steps);
  tc.lr0 = cfg_.control_lr0;
  tc.lr1 = cfg_.control_lr1;
  tc.weight_decay = cfg_.weight_decay;
  tc.mode = v == Variant::ddim ? SamplerMode::ddim : SamplerMode::residual;
  tc.seed = derive_seed(cfg_.train_seed, 0xc0);
  ControlTrainer<float> trainer(*m_->net, sched_, tc);

  const std::size_t bs = std::size_t(cfg_.batch), n = pairs.size();
  std::vector<std::size_t> order;
  int epoch = 0;
  std::ofstream tlog(path("train_" + variant_name(v) + ".log"));
  tlog << "# step lr loss branch\n";
  ControlReport rep;
  double tail = 0;
  long tail_n = 0;
  const long tail_from = cfg_.control_steps - std::max(1L, cfg_.control_steps / 10);
  std::vector<SamplePair<float>> batch;
  for (long step = 0; step < cfg_.control_steps; ++step) {
    batch.clear();
    while (batch.size() < bs) {
      if (order.empty()) {
        order = detail::shuffled_indices(n, tc.seed, epoch++);
        std::reverse(order.begin(), order.end());
      }
      batch.push_back(pairs[order.back()]);
      order.pop_back();
    }
    const StepReport r = trainer.train_step(batch, step);
    tlog << step << ' ' << r.lr << ' ' << r.loss << ' ' << (r.pseudo ? "pseudo" : "plain") << '\n';
    if (step == 0) rep.first_loss = r.loss;
    if (step >= tail_from) tail += r.loss, ++tail_n;
    rep.pseudo_steps += r.pseudo;
    if (step % 100 == 0 || step + 1 == cfg_.control_steps)
      log("train " + variant_name(v) + " step " + std::to_string(step) + " lr " + fmt(r.lr, 7) + " loss " +
          fmt(r.loss, 6));
  }
  rep.last_loss = tail_n ? tail / double(tail_n) : rep.first_loss;
  log("train " + variant_name(v) + ": loss " + fmt(rep.first_loss, 6) + " -> " + fmt(rep.last_loss, 6) + ", " +
      std::to_string(rep.pseudo_steps) + " pseudo-input steps");
  Checkpoint c = new_checkpoint();
  c.meta += "variant=" + variant_name(v) + "\n";
  c.add_store(m_->net->trainable_params());
  write_checkpoint(control_ckpt(v), c);
  return rep;
}

DetailReport Pipeline::train_detail() {
  DetailReport rep;
  if (pixel_space()) {
    log("train-detail: skipped (pixel space)");
    return rep;
  }
  ensure_ae_loaded();
  m_->ae.reset_controller();
  {
    AutoencoderConfig ac;
    ac.seed = cfg_.ae_seed;
    ToyAutoencoder<float> fresh(ac);
    auto src = fresh.detail_params();
    auto dst = m_->ae.detail_params();
    // zero-deconv and project head restart from their initial values; controller mirrors the decoder
    for (const auto& e : src.entries())
      if (e.name.rfind("ae.ctrl", 0) != 0) dst.find(e.name)->value = e.param->value;
  }
  auto make = [&](const std::vector<ImageTriplet>& s) {
    std::vector<DetailExample<float>> ex;
    for (const auto& tr : s) ex.push_back({to_latent(tr.shadow_free), tr.shadow, tr.shadow_free});
    return ex;
  };
  const auto train = make(split("train"));
  const auto test = make(split("test"));
  rep.heldout_initial = detail_decoder_loss<float>(m_->ae, test);
  PretrainConfig pc{cfg_.detail_epochs, cfg_.detail_batch, cfg_.detail_lr0, cfg_.detail_lr1, cfg_.weight_decay,
                    derive_seed(cfg_.train_seed, 0xde7)};
  rep.epoch_loss = train_detail_decoder<float>(m_->ae, train, pc, [&](int ep, double loss, double lr) {
    log("train-detail epoch " + std::to_string(ep) + " lr " + fmt(lr, 6) + " loss " + fmt(loss, 6));
  });
  rep.heldout_final = detail_decoder_loss<float>(m_->ae, test);
  double sd = 0, sb = 0;
  for (const auto& ex : test) {
    sd += psnr(quantize8(m_->ae.decode_detail(ex.latent_sf, ex.shadow)), ex.target);
    sb += psnr(quantize8(m_->ae.decode_base(ex.latent_sf)), ex.target);
  }
  rep.detail_psnr = sd / double(test.size());
  rep.base_psnr = sb / double(test.size());
  log("train-detail: held-out loss " + fmt(rep.heldout_initial, 6) + " -> " + fmt(rep.heldout_final, 6) +
      ", reconstruction PSNR detail " + fmt(rep.detail_psnr) + " dB vs base " + fmt(rep.base_psnr) + " dB");
  Checkpoint c = new_checkpoint();
  c.add_store(m_->ae.detail_params());
  write_checkpoint(path("detail.ckpt"), c);
  m_->detail_ready = true;
  return rep;
}

Tensor<float> Pipeline::restore(const Tensor<float>& shadow, DecoderKind dec) {
  if (!m_->net) load_stages();
  Encoded<float> enc;
  const Tensor<float> z_s = to_latent(shadow, &enc);
  const auto steps = make_strided_subsequence(cfg_.T, cfg_.sample_steps);
  auto& net = *m_->net;
  const SamplerMode mode = m_->variant == Variant::ddim ? SamplerMode::ddim : SamplerMode::residual;
  const Tensor<float> z = sample<float>(
      [&](const Tensor<float>& zt, int t, const Tensor<float>& zs) { return net.forward(zt, t, zs); }, z_s, sched_,
      steps, cfg_.sample_seed, mode);
  return from_latent(z, shadow, pixel_space() ? nullptr : &enc, dec);
}

EvalResult Pipeline::run_test_split(Variant v, DecoderKind dec, const fs::path& out_dir) {
  load_stages(v);
  const auto& test = split("test");
  fs::create_directories(out_dir);
  EvalResult res;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Tensor<float> pred = quantize8(restore(test[i].shadow, dec));
    const std::string key = triplet_key("test", i);
    write_png(out_dir / (key + "_pred.png"), pred);
    res.rows.push_back(score_image(key, pred, test[i].shadow_free, test[i].mask));
  }
  res.report = aggregate(res.rows);
  return res;
}

EvalResult Pipeline::score_inputs() {
  const auto& test = split("test");
  EvalResult res;
  for (std::size_t i = 0; i < test.size(); ++i)
    res.rows.push_back(score_image(triplet_key("test", i), test[i].shadow,
                                   test[i].shadow_free, test[i].mask));
  res.report = aggregate(res.rows);
  return res;
}

std::vector<AblationRow> Pipeline::ablate() {
  if (!pixel_space() && !fs::exists(path("ae.ckpt"))) pretrain_ae();
  if (!fs::exists(path("base.ckpt"))) pretrain_base();
  if (!pixel_space() && !fs::exists(path("detail.ckpt"))) train_detail();
  std::vector<AblationRow> rows;
  const std::string extra = nlohmann::json{{"config_hash", config_hash(cfg_)}, {"code_version", code_version_hash()}}.dump();
  auto record = [&](const std::string& name, const EvalResult& r) {
    write_scores_csv(path("eval_" + name + ".csv"), r.rows);
    std::ofstream(path("eval_" + name + ".json")) << report_json(r.report, extra) << "\n";
    rows.push_back({name, r.report});
    log("ablate " + name + ": PSNR " + fmt(r.report.psnr) + " (S " + fmt(r.report.psnr_s) + ", NS " +
        fmt(r.report.psnr_ns) + "), SSIM " + fmt(r.report.ssim));
  };
  record("input", score_inputs());
  for (Variant v : {Variant::full, Variant::ddim, Variant::no_ema}) {
    if (!fs::exists(control_ckpt(v))) train_control(v);
    record(variant_name(v), run_test_split(v, DecoderKind::detail, path("pred_" + variant_name(v))));
  }
  record("base-decoder", run_test_split(Variant::full, DecoderKind::base, path("pred_base-decoder")));
  std::ofstream(path("ablation.md")) << ablation_markdown(rows);
  std::ofstream(path("ablation.json")) << ablation_json(rows, cfg_) << "\n";
  return rows;
}

std::string ablation_markdown(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "| variant | PSNR | PSNR-S | PSNR-NS | SSIM | SSIM-S | SSIM-NS |\n";
  os << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows)
    os << "| " << r.name << " | " << fmt(r.report.psnr) << " | " << fmt(r.report.psnr_s) << " | "
       << fmt(r.report.psnr_ns) << " | " << fmt(r.report.ssim) << " | " << fmt(r.report.ssim_s) << " | "
       << fmt(r.report.ssim_ns) << " |\n";
  return os.str();
}

std::string ablation_json(const std::vector<AblationRow>& rows, const RunConfig& cfg) {
  nlohmann::ordered_json j;
  j["config_hash"] = config_hash(cfg);
  j["code_version"] = code_version_hash();
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) j["rows"].push_back({{"name", r.name}, {"report", nlohmann::json::parse(report_json(r.report))}});
  return j.dump(2);
}

}  // namespace shadowdiff
