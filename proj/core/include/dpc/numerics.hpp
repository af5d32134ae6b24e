#pragma once

#include <functional>
#include <span>

#include "dpc/matrix.hpp"

namespace dpc {

/// Norms below this are treated as degenerate.
inline constexpr double kMinNorm = 1e-12;

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

/// a.b / (|a| |b|). Throws ZeroVector when either norm is below kMinNorm.
double cosine_sim(std::span<const double> a, std::span<const double> b);

/// Scales every row to unit L2 norm. Throws ZeroVector on a degenerate row.
Matrix l2_normalize_rows(const Matrix& m);

/// Row-wise softmax of m / temperature, shifted by the row max.
Matrix softmax_rows(const Matrix& m, double temperature = 1.0);
/// Row-wise log-softmax of m / temperature (log-sum-exp form).
Matrix log_softmax_rows(const Matrix& m, double temperature = 1.0);

double log_sum_exp(std::span<const double> values);

using ScalarFn = std::function<double(const Matrix&)>;

/// Central differences (f(p + eps e_i) - f(p - eps e_i)) / (2 eps) for every
/// entry of `params`. eps must lie in [1e-7, 1e-3].
Matrix finite_diff_grad(const ScalarFn& loss_fn, const Matrix& params, double eps = 1e-5);

/// (4 D(eps/2) - D(eps)) / 3 with D the central difference above. Cancels the
/// eps^2 truncation term, leaving O(eps^4).
Matrix extrapolated_diff_grad(const ScalarFn& loss_fn, const Matrix& params, double eps);

/// Elementwise |a - b| / max(|a|, floor), maximised over entries. `a` is the
/// reference (analytic) gradient.
double max_relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-6);

}  // namespace dpc
