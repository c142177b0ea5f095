#pragma once

#include <concepts>
#include <cstdint>
#include <string>

#include "shadowdiff/rng.hpp"
#include "shadowdiff/schedule.hpp"
#include "shadowdiff/tensor.hpp"

namespace shadowdiff {

/// Shadow latent, shadow-free latent and their residual r = z_s - z_0.
template <typename T>
struct SamplePair {
  Tensor<T> z_s;
  Tensor<T> z_0;
  Tensor<T> r;

  static SamplePair from_latents(Tensor<T> z_s, Tensor<T> z_0) {
    Tensor<T> r = z_s - z_0;
    return {std::move(z_s), std::move(z_0), std::move(r)};
  }
};

/// Network output split into a shadow-free estimate, a residual estimate and a pure-noise part.
template <typename T>
struct NrdOutput {
  Tensor<T> z0_hat;
  Tensor<T> r_hat;
  Tensor<T> eps_noise;
  Tensor<T> eps_net;
};

/// Which backward update the sampler runs. `ddim` drops the residual schedule.
enum class SamplerMode { residual, ddim };

namespace detail {

inline void check_t(const ScheduleTable& s, int t, int lo, const char* op) {
  if (t < lo || t > s.T)
    throw std::invalid_argument(std::string(op) + ": timestep " + std::to_string(t) + " outside [" +
                                std::to_string(lo) + ", " + std::to_string(s.T) + "]");
}

/// beta_bar * sqrt(alpha_bar) / sqrt(1 - alpha_bar): how much residual the network output carries at t.
inline double residual_gain(const ScheduleTable& s, int t) {
  const double denom = s.sqrt_one_minus_alpha_bar[t];
  if (!(denom > 0.0))
    throw DegenerateSchedule("1 - alpha_bar underflows to zero at t=" + std::to_string(t));
  return s.beta_bar[t] * s.sqrt_alpha_bar[t] / denom;
}

}  // namespace detail

/// z'_t = z_0 + beta_bar_t * r.
template <typename T>
Tensor<T> forward_interpolate(const Tensor<T>& z_0, const Tensor<T>& r, int t, const ScheduleTable& s) {
  detail::check_t(s, t, 0, "forward_interpolate");
  return lincomb(T(1), z_0, static_cast<T>(s.beta_bar[t]), r);
}

/// z_t = sqrt(alpha_bar_t) * z'_t + sqrt(1 - alpha_bar_t) * eps.
template <typename T>
Tensor<T> forward_noise(const Tensor<T>& z_prime, const Tensor<T>& eps, int t, const ScheduleTable& s) {
  detail::check_t(s, t, 0, "forward_noise");
  return lincomb(static_cast<T>(s.sqrt_alpha_bar[t]), z_prime, static_cast<T>(s.sqrt_one_minus_alpha_bar[t]), eps);
}

/// The composite target eps + beta_bar sqrt(alpha_bar) r / sqrt(1 - alpha_bar): what a perfect
/// network emits when its implied z0 estimate is exact.
template <typename T>
Tensor<T> compose_epsilon(const Tensor<T>& eps, const Tensor<T>& r, int t, const ScheduleTable& s) {
  detail::check_t(s, t, 1, "compose_epsilon");
  return lincomb(T(1), eps, static_cast<T>(detail::residual_gain(s, t)), r);
}

template <typename T>
Tensor<T> predict_z0(const Tensor<T>& z_t, const Tensor<T>& eps_net, int t, const ScheduleTable& s) {
  detail::check_t(s, t, 1, "predict_z0");
  if (!(s.alpha_bar[t] > 0.0)) throw DegenerateSchedule("alpha_bar is zero at t=" + std::to_string(t));
  const double inv = 1.0 / s.sqrt_alpha_bar[t];
  return lincomb(static_cast<T>(inv), z_t, static_cast<T>(-s.sqrt_one_minus_alpha_bar[t] * inv), eps_net);
}

/// Noise-residual decomposition of the network output at t.
template <typename T>
NrdOutput<T> nrd_decompose(const Tensor<T>& z_s, const Tensor<T>& z_t, const Tensor<T>& eps_net, int t,
                           const ScheduleTable& s) {
  NrdOutput<T> out;
  out.z0_hat = predict_z0(z_t, eps_net, t, s);
  out.r_hat = z_s - out.z0_hat;
  out.eps_noise = lincomb(T(1), eps_net, static_cast<T>(-detail::residual_gain(s, t)), out.r_hat);
  out.eps_net = eps_net;
  return out;
}

/// Residual-aware backward update from t to t_prev. Reads z_s at every step.
template <typename T>
Tensor<T> sampler_step(const Tensor<T>& z_s, const NrdOutput<T>& nrd, int t, int t_prev, const ScheduleTable& s) {
  detail::check_t(s, t, 1, "sampler_step");
  detail::check_t(s, t_prev, 0, "sampler_step");
  if (t_prev >= t) throw std::invalid_argument("sampler_step needs t_prev < t");
  Tensor<T> z_prime = lincomb(T(1), z_s, static_cast<T>(s.beta_bar[t_prev] - 1.0), nrd.r_hat);
  return forward_noise(z_prime, nrd.eps_noise, t_prev, s);
}

/// Plain deterministic DDIM update from t to t_prev.
template <typename T>
Tensor<T> ddim_step(const Tensor<T>& z_t, const Tensor<T>& eps_net, int t, int t_prev, const ScheduleTable& s) {
  detail::check_t(s, t_prev, 0, "ddim_step");
  if (t_prev >= t) throw std::invalid_argument("ddim_step needs t_prev < t");
  Tensor<T> z0_hat = predict_z0(z_t, eps_net, t, s);
  return lincomb(static_cast<T>(s.sqrt_alpha_bar[t_prev]), z0_hat, static_cast<T>(s.sqrt_one_minus_alpha_bar[t_prev]),
                 eps_net);
}

template <typename F, typename T>
concept EpsilonPredictor = requires(F f, const Tensor<T>& z, int t) {
  { f(z, t, z) } -> std::convertible_to<Tensor<T>>;
};

/// Full backward process from z_T = forward_noise(z_s, eps, T) down the reversed subsequence.
/// The last step lands on z'_0 = z_s - r_hat (residual mode) or z0_hat (ddim mode).
template <typename T, typename Denoise>
  requires EpsilonPredictor<Denoise, T>
Tensor<T> sample(Denoise&& denoise, const Tensor<T>& z_s, const ScheduleTable& s, const TimestepSubsequence& steps,
                 std::uint64_t seed, SamplerMode mode = SamplerMode::residual) {
  validate_subsequence(steps, s.T);
  Rng rng = make_rng(seed, 0x5a3b1e);
  Tensor<T> z = forward_noise(z_s, gaussian<T>(z_s.shape(), rng), s.T, s);
  for (std::size_t i = steps.steps.size(); i-- > 0;) {
    const int t = steps.steps[i];
    const int t_prev = i == 0 ? 0 : steps.steps[i - 1];
    Tensor<T> eps_net = denoise(z, t, z_s);
    z_s.check_same(eps_net, "sample: denoiser output");
    if (mode == SamplerMode::residual) {
      z = sampler_step(z_s, nrd_decompose(z_s, z, eps_net, t, s), t, t_prev, s);
    } else {
      z = ddim_step(z, eps_net, t, t_prev, s);
    }
    require_finite(z, "sampler state at t=" + std::to_string(t_prev));
  }
  return z;
}

/// Mean squared error between the shadow-free estimate and the target.
template <typename T>
double training_target_loss(const Tensor<T>& z0_hat, const Tensor<T>& z_0) {
  return mean_squared_error(z0_hat, z_0);
}

}  // namespace shadowdiff
