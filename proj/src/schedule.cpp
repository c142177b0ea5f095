#include "shadowdiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace shadowdiff {

ScheduleTable build_noise_schedule(int T, double beta_min, double beta_max) {
  if (T < 1) throw std::invalid_argument("noise schedule needs T >= 1, got " + std::to_string(T));
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0))
    throw std::invalid_argument("noise schedule needs 0 < beta_min <= beta_max < 1");

  ScheduleTable s;
  s.T = T;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.alpha_bar.assign(T + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    const double rate = T == 1 ? beta_min : beta_min + (beta_max - beta_min) * double(t - 1) / double(T - 1);
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - rate);
  }
  s.sqrt_alpha_bar.resize(T + 1);
  s.sqrt_one_minus_alpha_bar.resize(T + 1);
  for (int t = 0; t <= T; ++t) {
    s.sqrt_alpha_bar[t] = std::sqrt(s.alpha_bar[t]);
    s.sqrt_one_minus_alpha_bar[t] = std::sqrt(1.0 - s.alpha_bar[t]);
  }
  return s;
}

std::vector<double> build_residual_schedule(int T) {
  if (T < 1) throw std::invalid_argument("residual schedule needs T >= 1, got " + std::to_string(T));
  std::vector<double> b(T + 1);
  for (int t = 0; t <= T; ++t) b[t] = double(t) / double(T);
  b[T] = 1.0;
  return b;
}

ScheduleTable ScheduleTable::make(int T, double beta_min, double beta_max) {
  ScheduleTable s = build_noise_schedule(T, beta_min, beta_max);
  s.beta_bar = build_residual_schedule(T);
  return s;
}

TimestepSubsequence make_strided_subsequence(int T, int S) {
  if (S < 1 || S > T)
    throw std::invalid_argument("strided subsequence needs 1 <= S <= T, got S=" + std::to_string(S) +
                                " T=" + std::to_string(T));
  TimestepSubsequence seq;
  for (int k = 1; k <= S; ++k) {
    int step = static_cast<int>(std::lround(double(T) * k / S));
    step = std::max(step, 1);
    if (seq.steps.empty() || step > seq.steps.back()) seq.steps.push_back(step);
  }
  seq.steps.back() = T;
  return seq;
}

void validate_subsequence(const TimestepSubsequence& seq, int T) {
  if (seq.steps.empty()) throw std::invalid_argument("empty timestep subsequence");
  if (seq.steps.front() < 1) throw std::invalid_argument("timestep subsequence must start at >= 1");
  if (seq.steps.back() != T) throw std::invalid_argument("timestep subsequence must end at T");
  for (std::size_t i = 1; i < seq.steps.size(); ++i)
    if (seq.steps[i] <= seq.steps[i - 1]) throw std::invalid_argument("timestep subsequence not strictly increasing");
}

}  // namespace shadowdiff
