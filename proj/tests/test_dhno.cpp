#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "dpc/backbone.hpp"
#include "dpc/config.hpp"
#include "dpc/dhno.hpp"
#include "dpc/errors.hpp"
#include "dpc/numerics.hpp"

namespace dpc {
namespace {

SyntheticDataset ten_classes(std::uint64_t seed = 1) {
  DatasetConfig d;
  d.n_classes = 10;
  d.shots = 3;
  d.test_per_class = 2;
  d.seed = seed;
  return generate(d);
}

// Text features are the 5x5 identity, so an image feature ranks base classes
// by its own entries.
HardNegativeBatch sample_with_scores(const SyntheticDataset& ds,
                                     const std::vector<std::vector<double>>& scores,
                                     const std::vector<std::size_t>& local_labels, std::size_t k) {
  Matrix text(5, 5);
  for (std::size_t i = 0; i < 5; ++i) text(i, i) = 1.0;
  Matrix img(scores.size(), 5);
  std::vector<std::size_t> labels, images;
  for (std::size_t r = 0; r < scores.size(); ++r) {
    for (std::size_t c = 0; c < 5; ++c) img(r, c) = scores[r][c];
    labels.push_back(ds.base_ids[local_labels[r]]);
    images.push_back(train_images_of(ds, labels.back()).front());
  }
  Rng rng(0);
  return sample_hard_negatives(ds, text, img, images, labels, k, 0.01, rng);
}

std::vector<std::size_t> globals(const SyntheticDataset& ds, std::vector<std::size_t> local) {
  for (auto& l : local) l = ds.base_ids[l];
  return local;
}

TEST(RankBaseClasses, DescendingWithLowerIdOnTies) {
  const std::vector<double> logits{0.5, 2.0, 0.5, -1.0, 2.0};
  EXPECT_EQ(rank_base_classes(logits), (std::vector<std::size_t>{1, 4, 0, 2, 3}));
}

TEST(Sampler, SingleItemTakesRunnerUp) {
  const SyntheticDataset ds = ten_classes();
  const HardNegativeBatch b = sample_with_scores(ds, {{0.9, 0.1, 0.5, 0.0, 0.2}}, {0}, 2);
  EXPECT_EQ(b.labels, globals(ds, {0, 2}));
  EXPECT_EQ(b.positive, (std::vector<bool>{true, false}));
}

TEST(Sampler, SharedRunnerUpAppearsOnce) {
  const SyntheticDataset ds = ten_classes();
  const HardNegativeBatch b = sample_with_scores(
      ds, {{0.9, 0.1, 0.5, 0.0, 0.2}, {0.1, 0.9, 0.5, 0.0, 0.2}}, {0, 1}, 2);
  EXPECT_EQ(b.size(), 3u);
  EXPECT_EQ(b.labels, globals(ds, {0, 1, 2}));
}

TEST(Sampler, MissedPositiveKeepsTopKMinusOne) {
  const SyntheticDataset ds = ten_classes();
  const HardNegativeBatch b = sample_with_scores(ds, {{0.0, 0.9, 0.8, 0.7, 0.6}}, {0}, 3);
  EXPECT_EQ(b.labels, globals(ds, {0, 1, 2}));
}

TEST(Sampler, GroundTruthOutranksItsOwnNegatives) {
  const SyntheticDataset ds = ten_classes();
  // Item 1's label (local 2) is item 0's runner-up; the ground truth copy wins.
  const HardNegativeBatch b = sample_with_scores(
      ds, {{0.9, 0.1, 0.5, 0.0, 0.2}, {0.0, 0.1, 0.9, 0.3, 0.2}}, {0, 2}, 2);
  EXPECT_EQ(b.labels, globals(ds, {0, 2, 3}));
  EXPECT_EQ(b.positive, (std::vector<bool>{true, true, false}));
}

TEST(Sampler, EnforcesBatchConstraint) {
  const SyntheticDataset ds = ten_classes();
  EXPECT_THROW(sample_with_scores(ds, {{1, 0, 0, 0, 0}, {0, 1, 0, 0, 0}}, {0, 1}, 3),
               BatchExceedsBaseClasses);
}

TEST(Sampler, InvariantsOnDefaultBenchmark) {
  const ExperimentConfig cfg = default_config(3);
  const SyntheticDataset ds = generate(cfg.dataset);
  const FrozenEncoders enc(cfg.encoder);
  const PromptState p = initial_prompt(ds, cfg.prompt, 1);
  const FewShotSplit split = few_shot_split(ds);
  Rng rng(5, "test/sampler");
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> imgs, labels;
    for (int i = 0; i < 4; ++i) {
      const auto j = rng.uniform_below(split.images.size());
      imgs.push_back(split.images[j]);
      labels.push_back(split.labels[j]);
    }
    const HardNegativeBatch b = sample_hard_negatives(ds, enc, p, imgs, labels, 8, 0.01, rng);
    EXPECT_LE(b.size(), 32u);
    EXPECT_EQ(std::set<std::size_t>(b.labels.begin(), b.labels.end()).size(), b.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
      EXPECT_TRUE(ds.is_base(b.labels[i]));
      ASSERT_LT(b.images[i], ds.train.size());
      EXPECT_EQ(ds.train[b.images[i]].label, b.labels[i]);
    }
    std::set<std::size_t> gt(labels.begin(), labels.end());
    for (std::size_t i = 0; i < b.size(); ++i)
      EXPECT_EQ(b.positive[i], gt.count(b.labels[i]) == 1) << i;
    const SelectionMatrix q = SelectionMatrix::from_batch(ds, b);
    const Matrix dense = q.dense();
    for (std::size_t r = 0; r < dense.rows(); ++r) {
      double s = 0;
      for (double v : dense.row(r)) s += v;
      EXPECT_EQ(s, 1.0);
      EXPECT_EQ(dense(r, ds.local_index(b.labels[r])), 1.0);
    }
  }
}

TEST(FilterFeatures, SelectionExamples) {
  const SyntheticDataset ds = ten_classes();
  const FrozenEncoders enc(EncoderConfig{.seed = 3});
  const Matrix prompt = Rng(1).gaussian_matrix(4, 16, 0.5);
  const Matrix tokens = ds.split_tokens(Split::base);
  const Matrix all = l2_normalize_rows(encode_texts(enc, prompt, tokens));

  SelectionMatrix identity{5, {0, 1, 2, 3, 4}};
  EXPECT_EQ(filter_features(enc, prompt, tokens, identity), all);

  const Matrix picked = filter_features(enc, prompt, tokens, SelectionMatrix{5, {2, 0}});
  EXPECT_EQ(Matrix::row_vector(picked.row(0)), Matrix::row_vector(all.row(2)));
  EXPECT_EQ(Matrix::row_vector(picked.row(1)), Matrix::row_vector(all.row(0)));

  // Encoding each selected class on its own and normalising agrees.
  for (std::size_t r = 0; r < 2; ++r) {
    const std::size_t local = r == 0 ? 2 : 0;
    const Matrix single = l2_normalize_rows(
        Matrix::row_vector(encode_text(enc, prompt, tokens.row(local))));
    EXPECT_LT(max_abs_diff(Matrix::row_vector(picked.row(r)), single), 1e-12);
  }
  // Dense Q times the normalised table is the same gather.
  const Matrix qd = SelectionMatrix{5, {2, 0}}.dense();
  EXPECT_LT(max_abs_diff(matmul(qd, all), picked), 1e-15);
}

TEST(InfoNce, ClosedForms) {
  const double e = std::exp(1.0);
  EXPECT_NEAR(infonce_from_similarity(Matrix{{1, 0}, {0, 1}}, 1.0), -2.0 * std::log(e / (e + 1)),
              1e-12);
  EXPECT_NEAR(-2.0 * std::log(e / (e + 1)), 0.6265, 5e-5);
  EXPECT_NEAR(infonce_from_similarity(Matrix(2, 2, 0.3), 1.0), 2.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(infonce_from_similarity(Matrix(5, 5, 0.7), 0.01), 2.0 * std::log(5.0), 1e-12);
  EXPECT_THROW(infonce_from_similarity(Matrix{{1.0}}, 1.0), DegenerateBatch);
}

TEST(InfoNce, TransposeSymmetry) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const Matrix s = rng.gaussian_matrix(6, 6, 1.0);
    EXPECT_NEAR(infonce_from_similarity(s, 0.1), infonce_from_similarity(transpose(s), 0.1),
                1e-12);
  }
}

TEST(InfoNce, NormalisesImagesInternally) {
  Rng rng(3);
  const Matrix text = l2_normalize_rows(rng.gaussian_matrix(4, 8, 1.0));
  Matrix img = rng.gaussian_matrix(4, 8, 1.0);
  const double ref = infonce_loss(text, img, 0.05);
  EXPECT_NEAR(ref, infonce_from_similarity(matmul_nt(text, l2_normalize_rows(img)), 0.05), 1e-12);
  img *= 7.5;
  EXPECT_NEAR(infonce_loss(text, img, 0.05), ref, 1e-12);
}

TEST(InfoNce, TapedGradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const Matrix img = rng.gaussian_matrix(3, 8, 1.0);
    const Matrix raw = rng.gaussian_matrix(3, 8, 1.0);
    auto f = [&](const Matrix& m) { return infonce_loss(l2_normalize_rows(m), img, 0.1); };
    ad::Tape tape;
    ad::Var x = tape.parameter(raw);
    ad::Var loss = ad::infonce_loss(ad::l2_normalize_rows(x), tape.constant(img), 0.1);
    EXPECT_NEAR(loss.value()(0, 0), f(raw), 1e-12);
    tape.backward(loss);
    EXPECT_LT(max_relative_error(x.grad(), finite_diff_grad(f, raw, 1e-5)), 1e-4);
  }
}

class DpcFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg = default_config(11);
    ds = generate(cfg.dataset);
    enc = std::make_unique<FrozenEncoders>(cfg.encoder);
    tuned = initial_prompt(ds, cfg.prompt, cfg.backbone.seed);
    tuned.text = tuned.text * 10.0;
    tuned.frozen = true;
  }

  HardNegativeBatch batch_of(std::size_t b, std::size_t k, std::uint64_t seed) {
    const FewShotSplit split = few_shot_split(ds);
    std::vector<std::size_t> imgs, labels;
    for (std::size_t i = 0; i < b; ++i) {
      imgs.push_back(split.images[i * 37 % split.images.size()]);
      labels.push_back(split.labels[i * 37 % split.images.size()]);
    }
    Rng rng(seed);
    return sample_hard_negatives(ds, *enc, tuned, imgs, labels, k, cfg.dpc.train.tau, rng);
  }

  ExperimentConfig cfg;
  SyntheticDataset ds;
  std::unique_ptr<FrozenEncoders> enc;
  PromptState tuned;
};

TEST_F(DpcFixture, BatchLossGradientMatchesFiniteDifferences) {
  for (DpcLoss loss : {DpcLoss::infonce, DpcLoss::cross_entropy}) {
    for (double omega : {0.0, 0.2, 1.0}) {
      DualPromptState dual = make_dual(tuned, omega, 1e-6);
      dual.parallel.text = dual.parallel.text + Rng(7).gaussian_matrix(4, 16, 0.1);
      DpcConfig dc = cfg.dpc;
      dc.loss = loss;
      dc.omega_base = omega;
      const HardNegativeBatch batch = batch_of(1, 3, 9);
      ASSERT_EQ(batch.size(), 3u);
      const LossAndGrad g = dpc_batch_loss_and_grad(*enc, ds, dual, batch, dc);
      EXPECT_NEAR(g.loss, dpc_batch_loss(*enc, ds, dual, batch, dc), 1e-10);
      const Matrix num = finite_diff_grad(
          [&](const Matrix& m) {
            DualPromptState q = dual;
            q.parallel.text = m;
            return dpc_batch_loss(*enc, ds, q, batch, dc);
          },
          dual.parallel.text, 3e-4);
      EXPECT_LT(max_relative_error(g.text_grad, num), 1e-4)
          << (loss == DpcLoss::infonce ? "infonce" : "ce") << " omega " << omega;
    }
  }
}

TEST_F(DpcFixture, ZeroLearningRateLeavesParallelAtTuned) {
  DpcConfig dc = cfg.dpc;
  dc.train.lr = 0.0;
  dc.train.epochs = 1;
  const DpcResult r = train_dpc(ds, *enc, tuned, dc);
  EXPECT_EQ(r.dual.parallel.text, tuned.text);
  EXPECT_EQ(r.dual.tuned, tuned);
}

TEST_F(DpcFixture, TrainingMovesOnlyTheParallelPromptAndIsDeterministic) {
  DpcConfig dc = cfg.dpc;
  dc.train.epochs = 2;
  const PromptState before = tuned;
  const DpcResult a = train_dpc(ds, *enc, tuned, dc);
  const DpcResult b = train_dpc(ds, *enc, tuned, dc);
  EXPECT_EQ(tuned, before);
  EXPECT_EQ(a.dual.tuned.text, before.text);
  EXPECT_TRUE(a.dual.tuned.frozen);
  EXPECT_NE(a.dual.parallel.text, before.text);
  EXPECT_EQ(a.dual.parallel.text, b.dual.parallel.text);
  EXPECT_EQ(a.loss_curve, b.loss_curve);
  EXPECT_EQ(a.loss_curve.size(), 2u);
  EXPECT_EQ(a.audit.size(), a.steps);
}

TEST_F(DpcFixture, HardBatchesAreMoreSimilarThanRandomOnes) {
  DpcConfig dc = cfg.dpc;
  dc.train.epochs = 1;
  const DpcResult r = train_dpc(ds, *enc, tuned, dc);
  double hard = 0, rnd = 0;
  for (const SamplerAuditRow& row : r.audit) {
    hard += row.hard_similarity;
    rnd += row.random_similarity;
  }
  EXPECT_GT(hard, rnd);
}

TEST(MeanPairwiseCosine, SmallCases) {
  const Matrix f{{1, 0}, {0, 1}, {1, 1}};
  const std::vector<std::size_t> rows{0, 1, 2};
  const double c = 1 / std::sqrt(2.0);
  EXPECT_NEAR(mean_pairwise_cosine(f, rows), (0 + c + c) / 3, 1e-12);
}

}  // namespace
}  // namespace dpc
