#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dpc/config.hpp"

namespace dpc {

inline constexpr double kGradCheckEps = 1e-3;

inline constexpr double kGradCheckTolerance = 1e-4;

struct OpCheck {
  std::string op;
  std::size_t probes = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<OpCheck> ops;
  bool passed() const;
};

/// Compares analytic prompt gradients with extrapolated central differences
/// for the cross-entropy loss, the symmetric InfoNCE loss and both encode paths.
/// Probe k uses the "gradcheck/<k>" stream of config.seed, so reports depend
/// only on the seed, dims and probe count.
///
/// Logits are scaled by 1/tau = 100. A single central difference then has no
/// step where both truncation and rounding stay below 1e-4 relative on every
/// probe; extrapolating steps eps and eps/2 removes the eps^2 term.
GradCheckReport gradcheck(const ExperimentConfig& config, std::size_t n_probes,
                          double eps = kGradCheckEps);

/// Throws GradCheckFailed naming every op above tolerance.
void require_passed(const GradCheckReport& report);

}  // namespace dpc
