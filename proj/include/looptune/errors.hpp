#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace looptune {

/// Base class for everything this library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A caller violated a documented precondition (wrong dimensions,
/// mixed tapes, improper transfer function, ...).
struct UsageError : Error {
  using Error::Error;
};

/// A computation produced NaN/Inf or is otherwise numerically unusable.
struct NumericError : Error {
  using Error::Error;
};

/// File could not be opened, written, or renamed.
struct IoError : Error {
  using Error::Error;
};

/// A closed-loop rollout exceeded the divergence threshold.
/// Carries the step index at which the output blew up.
struct DivergedError : NumericError {
  DivergedError(std::size_t step_, double magnitude_)
      : NumericError("rollout diverged at step " + std::to_string(step_) +
                     " (|y| = " + std::to_string(magnitude_) + ")"),
        step(step_),
        magnitude(magnitude_) {}
  std::size_t step;
  double magnitude;
};

/// Config file failed validation. Collects every violation, not just the first.
struct ConfigError : Error {
  explicit ConfigError(std::vector<std::string> violations_)
      : Error(join(violations_)), violations(std::move(violations_)) {}

  std::vector<std::string> violations;

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string out = "config invalid:";
    for (const auto& s : v) {
      out += "\n  - ";
      out += s;
    }
    return out;
  }
};

/// Every training reference diverged in one epoch; carries the last
/// parameter vector that still produced finite costs.
struct TuningFailedError : Error {
  explicit TuningFailedError(std::vector<double> last_good_)
      : Error("tuning failed: all training references diverged"),
        last_good(std::move(last_good_)) {}
  std::vector<double> last_good;
};

}  // namespace looptune
