#pragma once

#include <stdexcept>
#include <string>

namespace shadowdiff {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A schedule coefficient makes a division blow up (alpha_bar or 1 - alpha_bar at zero).
struct DegenerateSchedule : std::domain_error {
  using std::domain_error::domain_error;
};

/// NaN or Inf observed in an activation, gradient or loss.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace shadowdiff
