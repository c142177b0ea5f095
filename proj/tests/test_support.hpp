#pragma once

#include <cmath>
#include <vector>

#include "shadowdiff/rng.hpp"
#include "shadowdiff/schedule.hpp"
#include "shadowdiff/tensor.hpp"

namespace shadowdiff::testing {

/// Schedule with hand-picked alpha_bar values and beta_bar = t/T.
inline ScheduleTable table_from(std::vector<double> alpha_bar) {
  ScheduleTable s;
  s.T = int(alpha_bar.size()) - 1;
  s.alpha_bar = std::move(alpha_bar);
  s.beta_bar = build_residual_schedule(s.T);
  for (double a : s.alpha_bar) {
    s.sqrt_alpha_bar.push_back(std::sqrt(a));
    s.sqrt_one_minus_alpha_bar.push_back(std::sqrt(1.0 - a));
  }
  return s;
}

template <typename T>
Tensor<T> scalar(double v) {
  return Tensor<T>::scalar(static_cast<T>(v));
}

template <typename T>
Tensor<T> randn(const Shape& s, Rng& rng, double scale = 1.0) {
  Tensor<T> t = gaussian<T>(s, rng);
  for (auto& v : t.vec()) v = static_cast<T>(v * scale);
  return t;
}

}  // namespace shadowdiff::testing
