#pragma once

#include <vector>

namespace shadowdiff {

/// Noise and shadow-residual coefficients for timesteps 0..T.
///
/// alpha_bar[t] is the cumulative signal retention of the forward noising
/// process (1 at t = 0); beta_bar[t] is the cumulative weight of the shadow
/// residual (0 at t = 0, 1 at t = T). Immutable after construction.
struct ScheduleTable {
  int T = 0;
  double beta_min = 0.0;
  double beta_max = 0.0;
  std::vector<double> alpha_bar;
  std::vector<double> beta_bar;
  std::vector<double> sqrt_alpha_bar;
  std::vector<double> sqrt_one_minus_alpha_bar;

  /// Linear-beta noise schedule combined with the linear residual schedule.
  static ScheduleTable make(int T, double beta_min = 1e-4, double beta_max = 0.02);

  bool operator==(const ScheduleTable&) const = default;
};

/// Per-step noise rate interpolated linearly from beta_min to beta_max;
/// alpha_bar[t] = prod_{i <= t} (1 - rate_i). Fills the alpha part only.
ScheduleTable build_noise_schedule(int T, double beta_min, double beta_max);

/// beta_bar[t] = t / T. Fills the residual part only.
std::vector<double> build_residual_schedule(int T);

/// Strictly increasing steps tau_1 < ... < tau_S = T with tau_1 >= 1.
struct TimestepSubsequence {
  std::vector<int> steps;
};

/// S evenly spaced steps round(T * k / S), k = 1..S.
TimestepSubsequence make_strided_subsequence(int T, int S);

/// Throws if the subsequence violates its invariants for horizon T.
void validate_subsequence(const TimestepSubsequence& seq, int T);

}  // namespace shadowdiff
