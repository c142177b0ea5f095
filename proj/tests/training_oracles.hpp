#pragma once

#include <span>
#include <vector>

#include "shadowdiff/training.hpp"

namespace shadowdiff::testing {

/// Small denoiser used by the training checks: one latent channel, width 8.
inline UNetConfig tiny_unet() {
  UNetConfig c;
  c.latent_ch = 1;
  c.ch = 8;
  c.temb_dim = 8;
  c.groups = 2;
  c.seed = 31;
  return c;
}

template <typename T>
std::vector<SamplePair<T>> random_pairs(std::size_t n, std::size_t hw, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x9a1);
  std::vector<SamplePair<T>> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<T> z0 = gaussian<T>({1, hw, hw}, rng);
    Tensor<T> zs = z0;
    for (std::size_t j = 0; j < zs.size(); ++j)
      if (j % 3 == 0) zs[j] -= T(1);
    out.push_back(SamplePair<T>::from_latents(std::move(zs), std::move(z0)));
  }
  return out;
}

/// Control-branch training with no self-enhancement code path at all: forward sample, z0 loss,
/// AdamW, cosine lr. Same seeds and random streams as ControlTrainer.
template <typename T>
void plain_control_training(ControlledDenoiser<T>& net, const ScheduleTable& s, const ControlTrainConfig& cfg,
                            std::span<const SamplePair<T>> data, std::size_t batch, long steps) {
  AdamW opt;
  opt.weight_decay = cfg.weight_decay;
  for (long step = 0; step < steps; ++step) {
    auto params = net.trainable_params();
    params.zero_grad();
    Rng data_rng = make_rng(cfg.seed, step, 0xda7a);
    for (std::size_t i = 0; i < batch; ++i) {
      const auto& pair = data[(std::size_t(step) * batch + i) % data.size()];
      const int t = uniform_int(data_rng, 1, s.T);
      const Tensor<T> eps = gaussian<T>(pair.z_0.shape(), data_rng);
      const Tensor<T> z_t = forward_noise(forward_interpolate(pair.z_0, pair.r, t, s), eps, t, s);
      ControlTrainer<T>::accumulate_z0_loss(net, s, pair, z_t, t, batch);
    }
    opt.step(params, cosine_lr(std::min(step, cfg.total_steps), cfg.total_steps, cfg.lr0, cfg.lr1));
  }
}

template <typename T>
void trainer_steps(ControlTrainer<T>& tr, std::span<const SamplePair<T>> data, std::size_t batch, long steps) {
  std::vector<SamplePair<T>> b;
  for (long step = 0; step < steps; ++step) {
    b.clear();
    for (std::size_t i = 0; i < batch; ++i) b.push_back(data[(std::size_t(step) * batch + i) % data.size()]);
    tr.train_step(b, step);
  }
}

}  // namespace shadowdiff::testing
