#include <gtest/gtest.h>

#include "dpc/errors.hpp"
#include "dpc/prompts.hpp"
#include "dpc/rng.hpp"

namespace dpc {
namespace {

DualPromptState random_dual(std::uint64_t seed, bool visual = true) {
  Rng rng(seed, "test/dual");
  PromptState p;
  p.text = rng.gaussian_matrix(4, 16, 1.0);
  if (visual) p.visual = rng.gaussian_matrix(2, 16, 1.0);
  DualPromptState d = make_dual(p);
  d.parallel.text = rng.gaussian_matrix(4, 16, 1.0);
  if (visual) d.parallel.visual = rng.gaussian_matrix(2, 16, 1.0);
  return d;
}

TEST(Prompts, CloneIsExactAndDetached) {
  PromptState p;
  p.text = Matrix{{1, 2}, {3, 4}};
  p.frozen = true;
  PromptState c = clone_parallel(p);
  EXPECT_FALSE(c.frozen);
  EXPECT_EQ(c.text, p.text);
  EXPECT_EQ(clone_parallel(c), c);
  c.text(0, 0) = 9;
  EXPECT_EQ(p.text(0, 0), 1);
}

TEST(Prompts, MakeDualFreezesTuned) {
  PromptState p;
  p.text = Matrix{{1, 2}};
  const DualPromptState d = make_dual(p);
  EXPECT_TRUE(d.tuned.frozen);
  EXPECT_FALSE(d.parallel.frozen);
  EXPECT_EQ(d.parallel.text, d.tuned.text);
  EXPECT_DOUBLE_EQ(d.omega_base, 0.2);
  EXPECT_DOUBLE_EQ(d.omega_new, 1e-6);
}

TEST(WeightMix, Endpoints) {
  const DualPromptState d = random_dual(1);
  EXPECT_EQ(weight_mix(d, 0.0).text, d.tuned.text);
  EXPECT_EQ(weight_mix(d, 0.0).visual, d.tuned.visual);
  EXPECT_EQ(weight_mix(d, 1.0).text, d.parallel.text);
  EXPECT_EQ(weight_mix(d, 1.0).visual, d.parallel.visual);
}

TEST(WeightMix, ZerosAndOnes) {
  PromptState p;
  p.text = Matrix(3, 4, 0.0);
  DualPromptState d = make_dual(p);
  d.parallel.text = Matrix(3, 4, 1.0);
  const PromptState m = weight_mix(d, 0.2);
  for (double v : m.text.values()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(WeightMix, RejectsOutOfRange) {
  const DualPromptState d = random_dual(2);
  EXPECT_THROW(weight_mix(d, -0.1), OmegaOutOfRange);
  EXPECT_THROW(weight_mix(d, 1.5), OmegaOutOfRange);
}

TEST(WeightMix, IsAffine) {
  const DualPromptState d = random_dual(3);
  for (auto [w1, w2] : {std::pair{0.1, 0.7}, std::pair{0.0, 1.0}, std::pair{0.33, 0.34}}) {
    const Matrix lhs = weight_mix(d, w1).text + weight_mix(d, w2).text;
    const Matrix rhs = weight_mix(d, (w1 + w2) / 2).text * 2.0;
    EXPECT_LT(max_abs_diff(lhs, rhs), 1e-12);
  }
}

TEST(Decouple, RoundTripRecoversParallel) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const DualPromptState d = random_dual(seed);
    for (double w : {0.01, 0.2, 0.37, 0.5, 1.0}) {
      const PromptState back = decouple(weight_mix(d, w), d, w);
      EXPECT_LT(max_abs_diff(back.text, d.parallel.text), 1e-10) << w;
      EXPECT_LT(max_abs_diff(*back.visual, *d.parallel.visual), 1e-10) << w;
    }
  }
}

TEST(Decouple, OmegaOneIsIdentityAndZeroThrows) {
  const DualPromptState d = random_dual(4);
  const PromptState mixed = weight_mix(d, 0.4);
  EXPECT_EQ(decouple(mixed, d, 1.0).text, mixed.text);
  EXPECT_THROW(decouple(mixed, d, 0.0), OmegaZero);
}

TEST(NewClassPrompt, WeightCases) {
  DualPromptState d = random_dual(5);
  d.omega_new = 0.0;
  EXPECT_EQ(new_class_prompt(d).text, d.tuned.text);
  EXPECT_EQ(new_class_prompt(d).visual, d.tuned.visual);
  d.omega_new = 1e-10;  // below the cutoff: applied as exactly zero
  EXPECT_EQ(new_class_prompt(d).text, d.tuned.text);
  EXPECT_EQ(effective_omega_new(1e-10), 0.0);
  d.omega_new = 1e-6;
  const double spread = max_abs_diff(d.parallel.text, d.tuned.text);
  EXPECT_LE(max_abs_diff(new_class_prompt(d).text, d.tuned.text), 1e-6 * spread * (1 + 1e-9));
  EXPECT_EQ(effective_omega_new(1e-6), 1e-6);
  d.omega_new = 1.0;
  EXPECT_EQ(new_class_prompt(d).text, d.parallel.text);
}

TEST(MixTaped, ForwardAndGradient) {
  const DualPromptState d = random_dual(6, false);
  ad::Tape t;
  ad::Var p = t.parameter(d.parallel.text);
  ad::Var round = ad::unmix(ad::mix(p, d.tuned.text, 0.2), d.tuned.text, 0.2);
  EXPECT_LT(max_abs_diff(round.value(), d.parallel.text), 1e-12);
  t.backward(ad::sum(round));
  for (double g : p.grad().values()) EXPECT_NEAR(g, 1.0, 1e-12);
}

}  // namespace
}  // namespace dpc
