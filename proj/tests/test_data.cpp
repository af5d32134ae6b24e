#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <gtest/gtest.h>

#include "dpc/data.hpp"
#include "dpc/errors.hpp"

namespace dpc {
namespace {

namespace fs = std::filesystem;

DatasetConfig small(std::size_t n = 10, std::uint64_t seed = 1) {
  DatasetConfig c;
  c.n_classes = n;
  c.shots = 4;
  c.test_per_class = 3;
  c.seed = seed;
  return c;
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dpc_tests";
  fs::create_directories(dir);
  return dir / name;
}

TEST(Generate, DeterministicPerSeed) {
  EXPECT_EQ(generate(small()), generate(small()));
  EXPECT_NE(generate(small()).class_tokens, generate(small(10, 2)).class_tokens);
}

TEST(Generate, ShapesAndCounts) {
  const SyntheticDataset ds = generate(small());
  EXPECT_EQ(ds.latents.rows(), 10u);
  EXPECT_EQ(ds.latents.cols(), 8u);
  EXPECT_EQ(ds.class_tokens.cols(), 16u);
  EXPECT_EQ(ds.train.size(), 40u);
  EXPECT_EQ(ds.test.size(), 30u);
  for (const Image& im : ds.train) {
    EXPECT_EQ(im.patches.rows(), 4u);
    EXPECT_LT(im.label, 10u);
  }
}

TEST(Generate, BaseNewSplitIsHalfAndDisjoint) {
  for (std::size_t n : {4u, 10u, 11u, 128u}) {
    const SyntheticDataset ds = generate(small(n));
    EXPECT_EQ(ds.base_ids.size(), (n + 1) / 2);
    EXPECT_EQ(ds.base_ids.size() + ds.new_ids.size(), n);
    std::set<std::size_t> all(ds.base_ids.begin(), ds.base_ids.end());
    all.insert(ds.new_ids.begin(), ds.new_ids.end());
    EXPECT_EQ(all.size(), n);
    EXPECT_TRUE(std::is_sorted(ds.base_ids.begin(), ds.base_ids.end()));
    for (std::size_t id : ds.base_ids) EXPECT_TRUE(ds.is_base(id));
    for (std::size_t id : ds.new_ids) EXPECT_FALSE(ds.is_base(id));
  }
}

TEST(Generate, ZeroNoiseImagesEqualPrototypes) {
  DatasetConfig c = small();
  c.sigma = 0.0;
  const SyntheticDataset ds = generate(c);
  for (const auto* set : {&ds.train, &ds.test})
    for (const Image& im : *set)
      for (std::size_t r = 0; r < im.patches.rows(); ++r)
        for (std::size_t k = 0; k < im.patches.cols(); ++k)
          EXPECT_EQ(im.patches(r, k), ds.prototypes(im.label, k));
}

TEST(Generate, RejectsTooFewClasses) {
  EXPECT_THROW(generate(small(3)), TooFewClasses);
}

// Nearest-prototype accuracy on test images (mean patch vs prototypes).
double prototype_accuracy(const SyntheticDataset& ds) {
  std::size_t correct = 0;
  for (const Image& im : ds.test) {
    const Matrix mean = sum_rows(im.patches) * (1.0 / static_cast<double>(im.patches.rows()));
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < ds.prototypes.rows(); ++c) {
      double d = 0;
      for (std::size_t k = 0; k < mean.cols(); ++k) {
        const double diff = mean(0, k) - ds.prototypes(c, k);
        d += diff * diff;
      }
      if (d < best_d) best_d = d, best = c;
    }
    correct += best == im.label;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.test.size());
}

TEST(Generate, SeparabilityDecreasesWithNoise) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    double prev = 2.0;
    for (double sigma : {0.0, 0.1, 0.5, 1.0}) {
      DatasetConfig c = small(64, seed);
      c.test_per_class = 10;
      c.sigma = sigma;
      const double acc = prototype_accuracy(generate(c));
      if (sigma == 0.0) {
        EXPECT_EQ(acc, 1.0);
      }
      EXPECT_LE(acc, prev) << "seed " << seed << " sigma " << sigma;
      prev = acc;
    }
  }
}

TEST(FewShot, OnlyBaseTrainImages) {
  const SyntheticDataset ds = generate(small(11));
  const FewShotSplit fs = few_shot_split(ds);
  EXPECT_EQ(fs.images.size(), ds.n_base() * 4);
  std::map<std::size_t, std::size_t> per_class;
  for (std::size_t i = 0; i < fs.images.size(); ++i) {
    EXPECT_TRUE(ds.is_base(fs.labels[i]));
    EXPECT_EQ(ds.train[fs.images[i]].label, fs.labels[i]);
    ++per_class[fs.labels[i]];
  }
  for (auto [label, n] : per_class) EXPECT_EQ(n, 4u) << label;
}

TEST(FewShot, TrainImagesOfClass) {
  const SyntheticDataset ds = generate(small());
  for (std::size_t idx : train_images_of(ds, 3)) EXPECT_EQ(ds.train[idx].label, 3u);
  EXPECT_THROW(train_images_of(ds, 10), LabelOutOfRange);
}

TEST(PatchSums, ColumnSums) {
  const SyntheticDataset ds = generate(small());
  const Matrix s = patch_sums(ds.train, {5, 2});
  EXPECT_EQ(s.rows(), 2u);
  const Matrix ref = sum_rows(ds.train[2].patches);
  for (std::size_t k = 0; k < s.cols(); ++k) EXPECT_DOUBLE_EQ(s(1, k), ref(0, k));
}

TEST(BatchConstraint, DocumentedCases) {
  EXPECT_NO_THROW(validate_batch_config(64, 4, 8));
  EXPECT_NO_THROW(validate_batch_config(5, 2, 2));
  try {
    validate_batch_config(5, 2, 8);
    FAIL() << "expected BatchExceedsBaseClasses";
  } catch (const BatchExceedsBaseClasses& e) {
    EXPECT_EQ(e.suggested_k(), 2u);
  }
  EXPECT_EQ(suggested_top_k(64, 4), 15u);
  EXPECT_EQ(suggested_top_k(5, 4), 0u);
  EXPECT_THROW(validate_batch_config(32, 4, 8), BatchExceedsBaseClasses);
  EXPECT_THROW(validate_batch_config(10, 0, 2), ConfigError);
  EXPECT_THROW(validate_batch_config(10, 2, 1), ConfigError);
}

TEST(BatchConstraint, MatchesInequalityExhaustively) {
  for (std::size_t n = 2; n < 40; ++n)
    for (std::size_t b = 1; b < 10; ++b)
      for (std::size_t k = 2; k < 12; ++k) {
        const bool ok = b * k <= n - 1;
        if (ok) {
          EXPECT_NO_THROW(validate_batch_config(n, b, k));
        } else {
          try {
            validate_batch_config(n, b, k);
            ADD_FAILURE() << n << " " << b << " " << k;
          } catch (const BatchExceedsBaseClasses& e) {
            const std::size_t s = e.suggested_k();
            if (s != 0) {
              EXPECT_LE(b * s, n - 1);
              EXPECT_GT(b * (s + 1), n - 1);
            } else {
              EXPECT_LT((n - 1) / b, 2u);
            }
          }
        }
      }
}

TEST(DatasetFile, RoundTripAndTamperDetection) {
  const SyntheticDataset ds = generate(small(12, 5));
  const fs::path p = temp_path("ds.ini");
  save_dataset_file(p, ds);
  EXPECT_EQ(load_dataset_file(p), ds);

  std::ifstream in(p);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto pos = text.find("sigma=");
  ASSERT_NE(pos, std::string::npos);
  text.insert(pos + 6, "1");
  std::ofstream(p) << text;
  EXPECT_THROW(load_dataset_file(p), ConfigError);
}

TEST(DatasetChecksum, StableAndSensitive) {
  const SyntheticDataset a = generate(small());
  EXPECT_EQ(dataset_checksum(a), dataset_checksum(generate(small())));
  EXPECT_NE(dataset_checksum(a), dataset_checksum(generate(small(10, 2))));
  EXPECT_EQ(dataset_checksum(a).size(), 64u);
}

}  // namespace
}  // namespace dpc
