#include "dpc/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

#include "dpc/errors.hpp"

namespace dpc {

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionMismatch(fmt::format("dot: {} vs {}", a.size(), b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionMismatch(fmt::format("cosine_sim: {} vs {}", a.size(), b.size()));
  }
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na < kMinNorm || nb < kMinNorm) throw ZeroVector("cosine_sim: zero-norm input");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

Matrix l2_normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = out.row(r);
    const double n = l2_norm(row);
    if (n < kMinNorm) throw ZeroVector(fmt::format("l2_normalize_rows: row {} has zero norm", r));
    for (double& v : row) v /= n;
  }
  return out;
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

Matrix log_softmax_rows(const Matrix& m, double temperature) {
  if (!(temperature > 0.0)) {
    throw NonPositiveTemperature(fmt::format("temperature must be > 0, got {}", temperature));
  }
  Matrix out = m * (1.0 / temperature);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double lse = log_sum_exp(row);
    for (double& v : row) v -= lse;
  }
  return out;
}

Matrix softmax_rows(const Matrix& m, double temperature) {
  Matrix out = log_softmax_rows(m, temperature);
  for (double& v : out.values()) v = std::exp(v);
  return out;
}

Matrix finite_diff_grad(const ScalarFn& loss_fn, const Matrix& params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw std::invalid_argument(fmt::format("finite_diff_grad: eps {} outside [1e-7, 1e-3]", eps));
  }
  Matrix probe = params;
  Matrix grad(params.rows(), params.cols());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = probe.values()[i];
    probe.values()[i] = orig + eps;
    const double up = loss_fn(probe);
    probe.values()[i] = orig - eps;
    const double down = loss_fn(probe);
    probe.values()[i] = orig;
    grad.values()[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

Matrix extrapolated_diff_grad(const ScalarFn& loss_fn, const Matrix& params, double eps) {
  const Matrix coarse = finite_diff_grad(loss_fn, params, eps);
  Matrix fine = finite_diff_grad(loss_fn, params, eps / 2);
  for (std::size_t i = 0; i < fine.size(); ++i)
    fine.values()[i] = (4.0 * fine.values()[i] - coarse.values()[i]) / 3.0;
  return fine;
}

double max_relative_error(const Matrix& analytic, const Matrix& numeric, double floor) {
  if (!analytic.same_shape(numeric)) {
    throw DimensionMismatch("max_relative_error: shape mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic.values()[i];
    const double n = numeric.values()[i];
    worst = std::max(worst, std::abs(a - n) / std::max(std::abs(a), floor));
  }
  return worst;
}

}  // namespace dpc
