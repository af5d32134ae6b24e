#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "dpc/errors.hpp"
#include "dpc/numerics.hpp"

namespace dpc {
namespace {

Matrix random_matrix(std::mt19937_64& gen, std::size_t r, std::size_t c, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (double& v : m.values()) v = u(gen);
  return m;
}

TEST(CosineSim, ClosedForms) {
  const std::vector<double> e0{1, 0}, e1{0, 1}, a{3, 4}, b{4, 3};
  EXPECT_DOUBLE_EQ(cosine_sim(e0, e0), 1.0);
  EXPECT_DOUBLE_EQ(cosine_sim(e0, e1), 0.0);
  // (3*4 + 4*3) / (5 * 5)
  EXPECT_NEAR(cosine_sim(a, b), 24.0 / 25.0, 1e-15);
}

TEST(CosineSim, RejectsZeroAndMismatch) {
  const std::vector<double> z{0, 0}, e0{1, 0}, three{1, 2, 3};
  EXPECT_THROW(cosine_sim(z, e0), ZeroVector);
  EXPECT_THROW(cosine_sim(e0, three), DimensionMismatch);
}

TEST(CosineSim, SymmetricAndScaleInvariant) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix m = random_matrix(gen, 2, 7, -3, 3);
    std::vector<double> a(m.row(0).begin(), m.row(0).end());
    std::vector<double> b(m.row(1).begin(), m.row(1).end());
    const double ref = cosine_sim(a, b);
    EXPECT_NEAR(cosine_sim(b, a), ref, 1e-12);
    const double alpha = scale(gen), beta = scale(gen);
    for (double& v : a) v *= alpha;
    for (double& v : b) v *= beta;
    EXPECT_NEAR(cosine_sim(a, b), ref, 1e-12);
    EXPECT_LE(std::abs(ref), 1.0);
  }
}

TEST(L2Normalize, Examples) {
  const Matrix out = l2_normalize_rows(Matrix{{3, 4, 0}, {1, 0, 0}});
  EXPECT_NEAR(out(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(out(0, 1), 0.8, 1e-15);
  EXPECT_EQ(out(1, 0), 1.0);
  const Matrix diag = l2_normalize_rows(Matrix{{2, 2}});
  EXPECT_NEAR(diag(0, 0), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(diag(0, 1), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_THROW(l2_normalize_rows(Matrix{{1, 1}, {0, 0}}), ZeroVector);
}

TEST(L2Normalize, UnitNormsAndIdempotent) {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix m = random_matrix(gen, 6, 9, -10, 10);
    const Matrix once = l2_normalize_rows(m);
    for (std::size_t r = 0; r < once.rows(); ++r) EXPECT_NEAR(l2_norm(once.row(r)), 1.0, 1e-10);
    EXPECT_LT(max_abs_diff(l2_normalize_rows(once), once), 1e-12);
  }
}

TEST(Softmax, Examples) {
  const Matrix uniform = softmax_rows(Matrix{{0, 0}}, 1.0);
  EXPECT_DOUBLE_EQ(uniform(0, 0), 0.5);
  const Matrix p = softmax_rows(Matrix{{1, 0}}, 1.0);
  const double e = std::exp(1.0);
  EXPECT_NEAR(p(0, 0), e / (e + 1), 1e-15);
  EXPECT_NEAR(p(0, 1), 1 / (e + 1), 1e-15);
  const Matrix big = softmax_rows(Matrix{{1000, 0}}, 1.0);
  EXPECT_TRUE(big.all_finite());
  EXPECT_DOUBLE_EQ(big(0, 0), 1.0);
  EXPECT_LT(big(0, 1), 1e-300);
}

TEST(Softmax, TemperatureScalesLogits) {
  const Matrix m{{0.3, -0.2, 0.9}};
  EXPECT_LT(max_abs_diff(log_softmax_rows(m, 0.01), log_softmax_rows(m * 100.0, 1.0)), 1e-12);
  EXPECT_THROW(softmax_rows(m, 0.0), NonPositiveTemperature);
  EXPECT_THROW(log_softmax_rows(m, -1.0), NonPositiveTemperature);
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix p = softmax_rows(random_matrix(gen, 4, 13, -50, 50), 1.0);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0;
      for (double v : p.row(r)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(LogSumExp, StableForLargeValues) {
  const std::vector<double> v{1000, 1000};
  EXPECT_NEAR(log_sum_exp(v), 1000 + std::log(2.0), 1e-12);
}

TEST(FiniteDiff, ScalarExamples) {
  const Matrix x3{{3.0}};
  const Matrix g = finite_diff_grad([](const Matrix& p) { return p(0, 0) * p(0, 0); }, x3, 1e-5);
  EXPECT_NEAR(g(0, 0), 6.0, 1e-4);
  const Matrix s = finite_diff_grad([](const Matrix& p) { return std::sin(p(0, 0)); },
                                    Matrix{{0.0}}, 1e-5);
  EXPECT_NEAR(s(0, 0), 1.0, 1e-6);
}

TEST(FiniteDiff, RejectsStepOutsideRange) {
  auto f = [](const Matrix& p) { return p(0, 0); };
  EXPECT_THROW(finite_diff_grad(f, Matrix{{1.0}}, 1e-8), std::invalid_argument);
  EXPECT_THROW(finite_diff_grad(f, Matrix{{1.0}}, 1e-2), std::invalid_argument);
}

TEST(FiniteDiff, ExtrapolationRemovesSecondOrderError) {
  auto f = [](const Matrix& p) { return std::exp(3.0 * p(0, 0)); };
  const Matrix x{{0.5}};
  const double exact = 3.0 * std::exp(1.5);
  const double central = std::abs(finite_diff_grad(f, x, 1e-3)(0, 0) - exact);
  const double extrapolated = std::abs(extrapolated_diff_grad(f, x, 1e-3)(0, 0) - exact);
  EXPECT_NEAR(central, exact * 9e-6 / 6, exact * 1e-7);  // eps^2 f''' / 6
  EXPECT_LT(extrapolated, central / 1000);
  // Quadratics are differentiated exactly by both.
  auto q = [](const Matrix& p) { return 2.0 * p(0, 0) * p(0, 0) - p(0, 0); };
  EXPECT_NEAR(extrapolated_diff_grad(q, Matrix{{1.5}}, 1e-3)(0, 0), 5.0, 1e-9);
}

TEST(MaxRelativeError, UsesAnalyticDenominatorWithFloor) {
  EXPECT_NEAR(max_relative_error(Matrix{{2.0}}, Matrix{{2.2}}), 0.1, 1e-12);
  // |a| below the floor: the floor is the denominator.
  EXPECT_NEAR(max_relative_error(Matrix{{0.0}}, Matrix{{1e-7}}), 0.1, 1e-12);
}

}  // namespace
}  // namespace dpc
