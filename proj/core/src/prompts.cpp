#include "dpc/prompts.hpp"

#include <fmt/format.h>

#include "dpc/errors.hpp"

namespace dpc {

namespace {

void check_omega(double omega) {
  if (!(omega >= 0.0 && omega <= 1.0)) {
    throw OmegaOutOfRange(fmt::format("omega {} outside [0, 1]", omega));
  }
}

void check_nonzero_omega(double omega) {
  check_omega(omega);
  if (omega == 0.0) throw OmegaZero("decouple: omega = 0 has no inverse");
}

void check_shapes(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw DimensionMismatch(
        fmt::format("prompt shapes differ: {}x{} vs {}x{}", a.rows(), a.cols(), b.rows(), b.cols()));
  }
}

}  // namespace

bool PromptState::same_shape(const PromptState& other) const noexcept {
  if (!text.same_shape(other.text)) return false;
  if (visual.has_value() != other.visual.has_value()) return false;
  return !visual || visual->same_shape(*other.visual);
}

PromptState clone_parallel(const PromptState& tuned) {
  PromptState copy = tuned;
  copy.frozen = false;
  return copy;
}

DualPromptState make_dual(const PromptState& tuned, double omega_base, double omega_new) {
  check_omega(omega_base);
  check_omega(omega_new);
  DualPromptState d;
  d.tuned = tuned;
  d.tuned.frozen = true;
  d.parallel = clone_parallel(tuned);
  d.omega_base = omega_base;
  d.omega_new = omega_new;
  return d;
}

Matrix mix(const Matrix& tuned, const Matrix& parallel, double omega) {
  check_omega(omega);
  check_shapes(tuned, parallel);
  if (omega == 0.0) return tuned;
  if (omega == 1.0) return parallel;
  return parallel * omega + tuned * (1.0 - omega);
}

Matrix unmix(const Matrix& mixed, const Matrix& tuned, double omega) {
  check_nonzero_omega(omega);
  check_shapes(mixed, tuned);
  return (mixed - tuned * (1.0 - omega)) * (1.0 / omega);
}

PromptState weight_mix(const DualPromptState& d, double omega) {
  if (!d.tuned.same_shape(d.parallel)) throw DimensionMismatch("weight_mix: P and P' differ");
  PromptState out;
  out.text = mix(d.tuned.text, d.parallel.text, omega);
  if (d.tuned.visual) out.visual = mix(*d.tuned.visual, *d.parallel.visual, omega);
  return out;
}

PromptState decouple(const PromptState& mixed, const DualPromptState& d, double omega_used) {
  if (!mixed.same_shape(d.tuned)) throw DimensionMismatch("decouple: mixed and P differ");
  PromptState out;
  out.text = unmix(mixed.text, d.tuned.text, omega_used);
  if (mixed.visual) out.visual = unmix(*mixed.visual, *d.tuned.visual, omega_used);
  return out;
}

double effective_omega_new(double omega_new) noexcept {
  return omega_new <= kOmegaNewZeroCutoff ? 0.0 : omega_new;
}

PromptState new_class_prompt(const DualPromptState& d) {
  return weight_mix(d, effective_omega_new(d.omega_new));
}

namespace ad {

Var mix(Var parallel, const Matrix& tuned, double omega) {
  check_omega(omega);
  check_shapes(parallel.value(), tuned);
  Tape& t = parallel.tape();
  return add(scale(parallel, omega), t.constant(tuned * (1.0 - omega)));
}

Var unmix(Var mixed, const Matrix& tuned, double omega) {
  check_nonzero_omega(omega);
  check_shapes(mixed.value(), tuned);
  Tape& t = mixed.tape();
  return scale(sub(mixed, t.constant(tuned * (1.0 - omega))), 1.0 / omega);
}

}  // namespace ad

}  // namespace dpc
