#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ism {

/// Base class for every error thrown by the library.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct invalid_kernel_error : error {
  using error::error;
};

/// Observed outcome has zero (or sub-normal) predictive mass.
struct impossible_outcome_error : error {
  using error::error;
};

struct invalid_base_measure_error : error {
  using error::error;
};

/// Calibration clusters overlap beyond the separation threshold.
struct calibration_ambiguous_error : error {
  using error::error;
};

/// Kernel family has a vanishing reference probability; no diffusive limit.
struct not_diffusive_error : error {
  using error::error;
};

/// SDE step control exhausted its halving budget.
struct step_size_error : error {
  using error::error;
};

struct invalid_apparatus_error : error {
  using error::error;
};

/// Operation requires the QND block structure and it does not hold.
struct qnd_violation_error : error {
  using error::error;
};

/// <psi|H_I|psi> != 0: the scaling limit does not exist.
struct no_continuum_limit_error : error {
  using error::error;
};

/// Apparatus matches the other scaling regime (diffusive vs jumpy).
struct wrong_limit_error : error {
  using error::error;
};

struct positivity_loss_error : error {
  using error::error;
};

/// Jump applied on a channel with vanishing intensity.
struct impossible_jump_error : error {
  using error::error;
};

struct config_error : error {
  explicit config_error(std::vector<std::string> messages)
      : error(join(messages)), details(std::move(messages)) {}
  explicit config_error(const std::string& message)
      : error(message), details{message} {}

  std::vector<std::string> details;

 private:
  static std::string join(const std::vector<std::string>& msgs) {
    std::string out;
    for (const auto& m : msgs) {
      if (!out.empty()) out += "; ";
      out += m;
    }
    return out.empty() ? std::string("invalid config") : out;
  }
};

}  // namespace ism
