#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "shadowdiff/nn/param.hpp"

namespace shadowdiff {

/// Adam with decoupled weight decay. Moments live on each Param; the step counter lives here.
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  long step_count = 0;

  template <typename T>
  void step(nn::ParamStore<T>& store, double lr) {
    ++step_count;
    const double bc1 = 1.0 - std::pow(beta1, double(step_count));
    const double bc2 = 1.0 - std::pow(beta2, double(step_count));
    for (const auto& e : store.entries()) {
      nn::Param<T>& p = *e.param;
      if (!p.trainable) continue;
      if (p.m.shape() != p.value.shape()) {
        p.m = Tensor<T>(p.value.shape());
        p.v = Tensor<T>(p.value.shape());
      }
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        const double m = beta1 * p.m[i] + (1.0 - beta1) * g;
        const double v = beta2 * p.v[i] + (1.0 - beta2) * g * g;
        p.m[i] = static_cast<T>(m);
        p.v[i] = static_cast<T>(v);
        double w = double(p.value[i]) * (1.0 - lr * weight_decay);
        w -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
        p.value[i] = static_cast<T>(w);
      }
    }
  }
};

/// Cosine annealing from lr0 at step 0 to lr1 at step == total.
inline double cosine_lr(long step, long total, double lr0, double lr1) {
  if (total < 1 || step < 0 || step > total)
    throw std::invalid_argument("cosine_lr needs 0 <= step <= total, total >= 1");
  return lr1 + (lr0 - lr1) * 0.5 * (1.0 + std::cos(std::numbers::pi * double(step) / double(total)));
}

}  // namespace shadowdiff
