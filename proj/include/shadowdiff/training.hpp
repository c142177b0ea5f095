#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shadowdiff/autoencoder.hpp"
#include "shadowdiff/denoiser.hpp"
#include "shadowdiff/diffusion.hpp"
#include "shadowdiff/optim.hpp"

namespace shadowdiff {

/// Cross-timestep self-enhancement settings.
struct SelfEnhanceConfig {
  double P = 0.2;           // probability of training on a pseudo-input
  int u_max = 50;           // jump size drawn uniformly from [1, u_max]
  double eta = 0.999;       // smoothing factor
  bool paper_literal = false;
  bool per_sample_branch = false;

  /// Weight given to the main network in each EMA update.
  double ema_main_weight() const { return paper_literal ? eta : 1.0 - eta; }

  void validate(int T) const {
    if (P < 0.0 || P > 1.0) throw std::invalid_argument("P must lie in [0, 1]");
    if (u_max < 1 || u_max > T - 1) throw std::invalid_argument("u_max must lie in [1, T-1]");
    if (eta < 0.0 || eta > 1.0) throw std::invalid_argument("eta must lie in [0, 1]");
  }
};

/// copy <- mix * main + (1 - mix) * copy for every parameter. main is not modified.
template <typename T>
void ema_update(const nn::ParamStore<T>& main, nn::ParamStore<T>& copy, double mix) {
  copy.require_same_structure(main);
  const T a = static_cast<T>(mix), b = static_cast<T>(1.0 - mix);
  for (std::size_t i = 0; i < copy.size(); ++i) {
    auto& c = copy.entries()[i].param->value;
    const auto& m = main.entries()[i].param->value;
    for (std::size_t j = 0; j < c.size(); ++j) c[j] = a * m[j] + b * c[j];
  }
}

/// Slowly moving replica of the controlled denoiser. Never receives gradients.
template <typename T>
class EmaCopy {
 public:
  EmaCopy() = default;
  EmaCopy(const ControlledDenoiser<T>& main, double mix) : net(main), mix_(mix) { net.trainable_params().set_trainable(false); }

  void update(ControlledDenoiser<T>& main) {
    auto dst = net.trainable_params();
    ema_update(main.trainable_params(), dst, mix_);
  }

  double mix() const { return mix_; }

  ControlledDenoiser<T> net;

 private:
  double mix_ = 0.001;
};

/// Epsilon predictor used to produce pseudo-inputs: (z_t, t, pair) -> eps_net.
template <typename T>
using PseudoEpsFn = std::function<Tensor<T>(const Tensor<T>&, int, const SamplePair<T>&)>;

/// Forward-process sample at t, with or without the residual schedule.
template <typename T>
Tensor<T> make_noisy_input(const SamplePair<T>& pair, const Tensor<T>& eps, int t, const ScheduleTable& s,
                           SamplerMode mode) {
  if (mode == SamplerMode::ddim) return forward_noise(pair.z_0, eps, t, s);
  return forward_noise(forward_interpolate(pair.z_0, pair.r, t, s), eps, t, s);
}

/// Builds z_{t+u} from the true pair and fresh noise, runs the copy at t+u and takes one
/// backward step to t. `forced_u` is a test hook (0 returns the forward sample at t).
template <typename T>
Tensor<T> make_pseudo_input(const PseudoEpsFn<T>& copy, const SamplePair<T>& pair, int t, std::uint64_t seed,
                            const ScheduleTable& s, int u_max, SamplerMode mode = SamplerMode::residual,
                            std::optional<int> forced_u = std::nullopt) {
  if (t < 1 || t > s.T - 1) throw std::invalid_argument("make_pseudo_input needs 1 <= t <= T-1");
  Rng rng = make_rng(seed, 0x95d);
  const int u = forced_u ? *forced_u : uniform_int(rng, 1, u_max);
  const int t_hi = std::min(t + u, s.T);
  Tensor<T> z_hi = make_noisy_input(pair, gaussian<T>(pair.z_0.shape(), rng), t_hi, s, mode);
  if (t_hi == t) return z_hi;
  Tensor<T> eps_net = copy(z_hi, t_hi, pair);
  if (mode == SamplerMode::ddim) return ddim_step(z_hi, eps_net, t_hi, t, s);
  return sampler_step(pair.z_s, nrd_decompose(pair.z_s, z_hi, eps_net, t_hi, s), t_hi, t, s);
}

struct ControlTrainConfig {
  SelfEnhanceConfig self_enhance;
  long total_steps = 1000;
  double lr0 = 5e-5;
  double lr1 = 1e-6;
  double weight_decay = 0.01;
  SamplerMode mode = SamplerMode::residual;
  std::uint64_t seed = 3;
};

/// Outcome of one optimizer step.
struct StepReport {
  double loss = 0.0;
  double lr = 0.0;
  bool pseudo = false;  // whether any sample in the batch used a pseudo-input
};

/// Trains the control branch of a ControlledDenoiser with the z0-reconstruction loss and
/// cross-timestep self-enhancement. Holds optimizer state and the EMA copy.
template <typename T>
class ControlTrainer {
 public:
  ControlTrainer(ControlledDenoiser<T>& main, const ScheduleTable& sched, ControlTrainConfig cfg)
      : main_(main), sched_(sched), cfg_(cfg), ema_(main, cfg.self_enhance.ema_main_weight()) {
    cfg_.self_enhance.validate(sched.T);
    opt_.weight_decay = cfg.weight_decay;
    pseudo_fn_ = [this](const Tensor<T>& z, int t, const SamplePair<T>& p) { return ema_.net.forward(z, t, p.z_s); };
  }

  /// Replaces the pseudo-input generator (tests plug in an exact oracle here).
  void set_pseudo_source(PseudoEpsFn<T> fn) { pseudo_fn_ = std::move(fn); }

  EmaCopy<T>& ema() { return ema_; }
  const AdamW& optimizer() const { return opt_; }
  AdamW& optimizer() { return opt_; }

  StepReport train_step(std::span<const SamplePair<T>> batch, long step_index) {
    if (batch.empty()) throw std::invalid_argument("train_step needs a non-empty batch");
    const auto& se = cfg_.self_enhance;
    StepReport rep;
    rep.lr = cosine_lr(std::min(step_index, cfg_.total_steps), cfg_.total_steps, cfg_.lr0, cfg_.lr1);
    Rng branch_rng = make_rng(cfg_.seed, step_index, 0xb7a);
    Rng data_rng = make_rng(cfg_.seed, step_index, 0xda7a);
    const bool batch_pseudo = uniform01(branch_rng) < se.P;

    auto params = main_.trainable_params();
    params.zero_grad();
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const SamplePair<T>& pair = batch[i];
      const int t = uniform_int(data_rng, 1, sched_.T);
      const Tensor<T> eps = gaussian<T>(pair.z_0.shape(), data_rng);
      const bool pseudo = (se.per_sample_branch ? uniform01(branch_rng) < se.P : batch_pseudo) && t < sched_.T;
      Tensor<T> z_t = pseudo ? make_pseudo_input(pseudo_fn_, pair, t, derive_seed(cfg_.seed, step_index, i, 0x95),
                                                 sched_, se.u_max, cfg_.mode)
                             : make_noisy_input(pair, eps, t, sched_, cfg_.mode);
      rep.pseudo = rep.pseudo || pseudo;
      loss_sum += accumulate_z0_loss(main_, sched_, pair, z_t, t, batch.size());
    }
    for (const auto& e : params.entries()) require_finite(e.param->grad, "gradient of " + e.name);
    opt_.step(params, rep.lr);
    ema_.update(main_);
    rep.loss = loss_sum / double(batch.size());
    return rep;
  }

  /// Forward + backward of the z0 reconstruction loss for one sample; gradients are scaled by
  /// 1/batch so that they average over the batch. Returns the sample's loss.
  static double accumulate_z0_loss(ControlledDenoiser<T>& net, const ScheduleTable& s, const SamplePair<T>& pair,
                                   const Tensor<T>& z_t, int t, std::size_t batch) {
    Tensor<T> eps_net = net.forward(z_t, t, pair.z_s);
    Tensor<T> z0_hat = predict_z0(z_t, eps_net, t, s);
    const double loss = training_target_loss(z0_hat, pair.z_0);
    if (!std::isfinite(loss)) throw NonFiniteError("training loss diverged");
    const T k = static_cast<T>(-2.0 * s.sqrt_one_minus_alpha_bar[t] / s.sqrt_alpha_bar[t] /
                               double(z0_hat.size() * batch));
    Tensor<T> g(z0_hat.shape());
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = k * (z0_hat[j] - pair.z_0[j]);
    net.backward(g);
    return loss;
  }

 private:
  ControlledDenoiser<T>& main_;
  const ScheduleTable& sched_;
  ControlTrainConfig cfg_;
  AdamW opt_;
  EmaCopy<T> ema_;
  PseudoEpsFn<T> pseudo_fn_;
};

/// Shared settings for the plain pretraining loops.
struct PretrainConfig {
  int epochs = 10;
  int batch = 8;
  double lr0 = 1e-3;
  double lr1 = 1e-5;
  double weight_decay = 0.01;
  std::uint64_t seed = 11;
};

using EpochLog = std::function<void(int epoch, double mean_loss, double lr)>;

namespace detail {

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng = make_rng(seed, epoch, 0x5f1);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

template <typename T>
void require_finite_grads(const nn::ParamStore<T>& params) {
  for (const auto& e : params.entries())
    if (e.param->trainable) require_finite(e.param->grad, "gradient of " + e.name);
}

/// Runs `per_sample(index, batch_size) -> loss` over shuffled minibatches with AdamW + cosine lr.
template <typename T, typename PerSample>
std::vector<double> minibatch_loop(nn::ParamStore<T>& params, std::size_t n, const PretrainConfig& cfg,
                                   PerSample&& per_sample, const EpochLog& log) {
  std::vector<double> epoch_losses;
  if (cfg.epochs <= 0 || n == 0) return epoch_losses;
  AdamW opt;
  opt.weight_decay = cfg.weight_decay;
  const std::size_t bs = std::max(1, cfg.batch);
  const long steps_per_epoch = long((n + bs - 1) / bs);
  const long total = steps_per_epoch * cfg.epochs;
  long step = 0;
  for (int ep = 0; ep < cfg.epochs; ++ep) {
    const auto idx = shuffled_indices(n, cfg.seed, ep);
    double sum = 0.0;
    double lr = cfg.lr0;
    for (std::size_t b = 0; b < n; b += bs) {
      const std::size_t cnt = std::min(bs, n - b);
      params.zero_grad();
      for (std::size_t j = 0; j < cnt; ++j) sum += per_sample(idx[b + j], cnt, step);
      require_finite_grads(params);
      lr = cosine_lr(step, total, cfg.lr0, cfg.lr1);
      opt.step(params, lr);
      ++step;
    }
    epoch_losses.push_back(sum / double(n));
    if (log) log(ep, epoch_losses.back(), lr);
  }
  return epoch_losses;
}

}  // namespace detail

/// Trains the base U-net as a plain noise predictor on clean latents (mean squared noise error).
template <typename T>
std::vector<double> pretrain_base(UNet<T>& net, std::span<const Tensor<T>> latents, const ScheduleTable& s,
                                  const PretrainConfig& cfg, const EpochLog& log = {}) {
  auto params = net.params();
  return detail::minibatch_loop(
      params, latents.size(), cfg,
      [&](std::size_t i, std::size_t bs, long step) {
        Rng rng = make_rng(cfg.seed, step, i, 0xe4);
        const int t = uniform_int(rng, 1, s.T);
        const Tensor<T> eps = gaussian<T>(latents[i].shape(), rng);
        const Tensor<T> z_t = forward_noise(latents[i], eps, t, s);
        const Tensor<T> pred = net.forward(z_t, t);
        const double loss = mean_squared_error(pred, eps);
        const T k = static_cast<T>(2.0 / double(pred.size() * bs));
        Tensor<T> g(pred.shape());
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = k * (pred[j] - eps[j]);
        net.backward(g);
        return loss;
      },
      log);
}

/// Mean squared noise error on held-out latents with seed-fixed (t, eps) draws.
template <typename T>
double base_noise_loss(UNet<T>& net, std::span<const Tensor<T>> latents, const ScheduleTable& s, std::uint64_t seed,
                       int draws = 4) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < latents.size(); ++i)
    for (int d = 0; d < draws; ++d) {
      Rng rng = make_rng(seed, i, d, 0x4e1d);
      const int t = uniform_int(rng, 1, s.T);
      const Tensor<T> eps = gaussian<T>(latents[i].shape(), rng);
      sum += mean_squared_error(net.forward(forward_noise(latents[i], eps, t, s), t), eps);
      ++n;
    }
  return n ? sum / double(n) : 0.0;
}

/// Pixel reconstruction pretraining of the encoder and base decoder.
template <typename T>
std::vector<double> pretrain_autoencoder(ToyAutoencoder<T>& ae, std::span<const Tensor<T>> images,
                                         const PretrainConfig& cfg, const EpochLog& log = {}) {
  auto params = ae.base_params();
  params.find("ae.latent_scale")->trainable = false;
  return detail::minibatch_loop(
      params, images.size(), cfg,
      [&](std::size_t i, std::size_t bs, long) {
        nn::ScaleFeatures<T> feats;
        const Tensor<T> latent = ae.encoder.forward(images[i], feats);
        const Tensor<T> out = ae.decoder.forward(latent);
        const double loss = mean_squared_error(out, images[i]);
        const T k = static_cast<T>(2.0 / double(out.size() * bs));
        Tensor<T> g(out.shape());
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = k * (out[j] - images[i][j]);
        ae.encoder.backward(ae.decoder.backward(g, true));
        return loss;
      },
      log);
}

/// Sets the latent scale so that encoded latents of `images` have unit standard deviation.
template <typename T>
void calibrate_latent_scale(ToyAutoencoder<T>& ae, std::span<const Tensor<T>> images) {
  double s2 = 0.0;
  std::size_t n = 0;
  for (const auto& img : images) {
    nn::ScaleFeatures<T> f;
    const Tensor<T> z = ae.encoder.forward(img, f);
    for (T v : z.vec()) s2 += double(v) * v;
    n += z.size();
  }
  const double sd = n ? std::sqrt(s2 / double(n)) : 1.0;
  ae.latent_scale.value[0] = static_cast<T>(sd > 0 ? 1.0 / sd : 1.0);
}

/// One detail-decoder training example: the shadow-free latent, the shadow image and the target.
template <typename T>
struct DetailExample {
  Tensor<T> latent_sf;
  Tensor<T> shadow;
  Tensor<T> target;
};

/// Trains controller, Zero-Deconv skips and project head with pixel MSE; encoder/decoder stay frozen.
template <typename T>
std::vector<double> train_detail_decoder(ToyAutoencoder<T>& ae, std::span<const DetailExample<T>> data,
                                         const PretrainConfig& cfg, const EpochLog& log = {}) {
  ae.base_params().set_trainable(false);
  auto params = ae.detail_params();
  params.set_trainable(true);
  return detail::minibatch_loop(
      params, data.size(), cfg,
      [&](std::size_t i, std::size_t bs, long) {
        const auto& ex = data[i];
        const Tensor<T> out = ae.decode_detail(ex.latent_sf, ex.shadow);
        const double loss = mean_squared_error(out, ex.target);
        const T k = static_cast<T>(2.0 / double(out.size() * bs));
        Tensor<T> g(out.shape());
        for (std::size_t j = 0; j < g.size(); ++j) g[j] = k * (out[j] - ex.target[j]);
        ae.decode_detail_backward(g);
        return loss;
      },
      log);
}

template <typename T>
double detail_decoder_loss(ToyAutoencoder<T>& ae, std::span<const DetailExample<T>> data) {
  double s = 0.0;
  for (const auto& ex : data) s += mean_squared_error(ae.decode_detail(ex.latent_sf, ex.shadow), ex.target);
  return data.empty() ? 0.0 : s / double(data.size());
}

}  // namespace shadowdiff
