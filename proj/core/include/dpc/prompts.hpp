#pragma once

#include <optional>

#include "dpc/autodiff.hpp"
#include "dpc/matrix.hpp"

namespace dpc {

inline constexpr double kDefaultOmegaBase = 0.2;
inline constexpr double kDefaultOmegaNew = 1e-6;
/// Configured new-class weights at or below this are applied as exactly 0.
inline constexpr double kOmegaNewZeroCutoff = 1e-9;

struct PromptState {
  Matrix text;
  std::optional<Matrix> visual;
  bool frozen = false;

  const Matrix* visual_or_null() const noexcept { return visual ? &*visual : nullptr; }
  bool same_shape(const PromptState& other) const noexcept;

  friend bool operator==(const PromptState&, const PromptState&) = default;
};

/// Tuned prompt P (frozen) and its learnable parallel copy P'.
struct DualPromptState {
  PromptState tuned;
  PromptState parallel;
  double omega_base = kDefaultOmegaBase;
  double omega_new = kDefaultOmegaNew;
};

/// Copy of `tuned` with frozen = false.
PromptState clone_parallel(const PromptState& tuned);

/// Starts a dual state from a tuned prompt; the tuned side is marked frozen.
DualPromptState make_dual(const PromptState& tuned, double omega_base = kDefaultOmegaBase,
                          double omega_new = kDefaultOmegaNew);

/// omega * parallel + (1 - omega) * tuned. omega = 0 and 1 return exact copies.
Matrix mix(const Matrix& tuned, const Matrix& parallel, double omega);
/// Inverse of mix for a fixed tuned prompt: (mixed - (1 - omega) tuned) / omega.
Matrix unmix(const Matrix& mixed, const Matrix& tuned, double omega);

/// Mixed prompt for both modalities. Throws OmegaOutOfRange.
PromptState weight_mix(const DualPromptState& d, double omega);
/// Recovers the parallel prompt from a mixed one. Throws OmegaZero for omega == 0.
PromptState decouple(const PromptState& mixed, const DualPromptState& d, double omega_used);
/// omega_n P' + (1 - omega_n) P with the configured omega_new; values at or
/// below kOmegaNewZeroCutoff yield P exactly.
PromptState new_class_prompt(const DualPromptState& d);

/// The weight actually applied for a configured omega_new.
double effective_omega_new(double omega_new) noexcept;

namespace ad {

Var mix(Var parallel, const Matrix& tuned, double omega);
Var unmix(Var mixed, const Matrix& tuned, double omega);

}  // namespace ad

}  // namespace dpc
