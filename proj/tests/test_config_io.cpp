#include <filesystem>
#include <fstream>
#include <limits>

#include <gtest/gtest.h>

#include "dpc/checkpoint.hpp"
#include "dpc/config.hpp"
#include "dpc/errors.hpp"
#include "dpc/gradcheck.hpp"
#include "dpc/hashing.hpp"
#include "dpc/rng.hpp"

namespace dpc {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dpc_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string replace_line(std::string text, const std::string& key, const std::string& line) {
  const auto pos = text.find("\n" + key + "=");
  if (pos == std::string::npos) throw std::runtime_error("no key " + key);
  const auto end = text.find('\n', pos + 1);
  return text.replace(pos + 1, end - pos - 1, line);
}

TEST(Hashing, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const fs::path p = temp_path("abc.txt");
  std::ofstream(p, std::ios::binary) << "abc";
  EXPECT_EQ(sha256_file(p), sha256_hex("abc"));
}

TEST(Config, DefaultsAndDerivedSeeds) {
  const ExperimentConfig c = default_config(5);
  EXPECT_EQ(c.dataset.n_classes, 128u);
  EXPECT_EQ(c.dataset.shots, 16u);
  EXPECT_EQ(c.dpc.train.batch_size, 4u);
  EXPECT_EQ(c.dpc.top_k, 8u);
  EXPECT_EQ(c.backbone.batch_size, 32u);
  EXPECT_DOUBLE_EQ(c.backbone.tau, 0.01);
  EXPECT_EQ(c.dataset.seed, derive_seed(5, "dataset"));
  EXPECT_EQ(c.encoder.seed, derive_seed(5, "encoder"));
  EXPECT_EQ(c.backbone.seed, derive_seed(5, "backbone"));
  EXPECT_EQ(c.dpc.train.seed, derive_seed(5, "dpc"));
  EXPECT_NO_THROW(validate(c));
}

TEST(Config, TextRoundTrip) {
  ExperimentConfig c = default_config(9);
  c.dataset.sigma = 0.123456789012345678;
  c.dpc.omega_base = 0.37;
  c.dpc.loss = DpcLoss::cross_entropy;
  c.prompt.visual = true;
  c.prompt.init = PromptInit::template_mean;
  c.toggles.decoupling = false;
  const ExperimentConfig back = parse_config(to_ini(c));
  EXPECT_TRUE(back == c);
  EXPECT_EQ(back.dataset.sigma, c.dataset.sigma);
  EXPECT_EQ(to_ini(back), to_ini(c));

  const fs::path p = temp_path("cfg.ini");
  save_config(p, c);
  EXPECT_TRUE(load_config(p) == c);
}

TEST(Config, MissingSeedsAreDerived) {
  std::string text = to_ini(default_config(3));
  // Drop every per-stage seed line.
  std::string out;
  std::string section;
  for (std::size_t start = 0; start < text.size();) {
    const auto end = text.find('\n', start);
    const std::string line = text.substr(start, end - start);
    if (!line.empty() && line[0] == '[') section = line;
    if (!(line.rfind("seed=", 0) == 0 && section != "[experiment]")) out += line + "\n";
    start = end + 1;
  }
  EXPECT_TRUE(parse_config(out) == default_config(3));
}

TEST(Config, StrictParsing) {
  const std::string good = to_ini(default_config(0));
  EXPECT_THROW(parse_config(good + "[bogus]\nx=1\n"), ConfigError);
  EXPECT_THROW(parse_config(replace_line(good, "sigma", "sigmaa=0.6")), ConfigError);
  EXPECT_THROW(parse_config(replace_line(good, "sigma", "sigma=abc")), ConfigError);
  EXPECT_THROW(parse_config(replace_line(good, "loss", "loss=mse")), ConfigError);
  EXPECT_THROW(parse_config(replace_line(good, "n_classes", "n_classes=-3")), ConfigError);
}

TEST(Config, ValidationCatchesBadCombinations) {
  ExperimentConfig c = default_config(0);
  c.dataset.n_classes = 64;  // 32 base classes cannot hold b = 4, K = 8
  EXPECT_THROW(validate(c), BatchExceedsBaseClasses);
  c = default_config(0);
  c.dpc.omega_base = 1.2;
  EXPECT_THROW(validate(c), OmegaOutOfRange);
  c = default_config(0);
  c.dataset.n_classes = 3;
  EXPECT_THROW(validate(c), TooFewClasses);
  c = default_config(0);
  c.backbone.tau = 0.0;
  EXPECT_THROW(validate(c), Error);
}

TEST(Config, EpochBudgetSplit) {
  EXPECT_EQ(split_epoch_budget(40), (std::pair<std::size_t, std::size_t>{20, 20}));
  EXPECT_EQ(split_epoch_budget(10), (std::pair<std::size_t, std::size_t>{5, 5}));
  EXPECT_EQ(split_epoch_budget(11), (std::pair<std::size_t, std::size_t>{5, 6}));
  EXPECT_THROW(split_epoch_budget(1), ConfigError);
}

Checkpoint sample_checkpoint(Stage stage) {
  Checkpoint c;
  c.stage = stage;
  c.config = default_config(6);
  Rng rng(6);
  c.tuned.text = rng.gaussian_matrix(4, 16, 1.0);
  c.tuned.visual = rng.gaussian_matrix(2, 16, 1.0);
  c.tuned.text(0, 0) = std::numeric_limits<double>::denorm_min();
  c.tuned.text(0, 1) = 1.0 / 3.0;
  c.tuned.frozen = true;
  if (stage == Stage::dpc) {
    PromptState p;
    p.text = rng.gaussian_matrix(4, 16, 1.0);
    p.visual = rng.gaussian_matrix(2, 16, 1.0);
    c.parallel = p;
  }
  c.omega_base = 0.2;
  c.omega_new = 1e-6;
  c.training = {20, 0.002, 1234567890123ULL, 640};
  return c;
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (Stage stage : {Stage::backbone, Stage::dpc}) {
    const Checkpoint c = sample_checkpoint(stage);
    const fs::path p = temp_path("ck.ini");
    save_checkpoint(p, c);
    const Checkpoint back = load_checkpoint(p);
    EXPECT_EQ(back.stage, c.stage);
    EXPECT_EQ(back.tuned, c.tuned);
    EXPECT_EQ(back.parallel, c.parallel);
    EXPECT_EQ(back.omega_base, c.omega_base);
    EXPECT_EQ(back.omega_new, c.omega_new);
    EXPECT_EQ(back.training, c.training);
    EXPECT_TRUE(back.config == c.config);
  }
}

TEST(Checkpoint, DualOfBackboneCheckpointHasEqualPrompts) {
  const DualPromptState d = sample_checkpoint(Stage::backbone).dual();
  EXPECT_EQ(d.parallel.text, d.tuned.text);
  EXPECT_TRUE(d.tuned.frozen);
}

TEST(Checkpoint, RejectsUnknownVersionAndMissingFields) {
  const fs::path p = temp_path("ck_bad.ini");
  save_checkpoint(p, sample_checkpoint(Stage::dpc));
  std::ifstream in(p);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::ofstream(p) << replace_line(text, "format_version", "format_version=99");
  EXPECT_THROW(load_checkpoint(p), ConfigError);
  const auto pos = text.find("parallel_text_row0");
  ASSERT_NE(pos, std::string::npos);
  std::string cut = text;
  cut.erase(pos, cut.find('\n', pos) - pos + 1);
  std::ofstream(p) << cut;
  EXPECT_THROW(load_checkpoint(p), ConfigError);
  EXPECT_THROW(load_checkpoint(temp_path("does_not_exist.ini")), ConfigError);
}

TEST(GradCheck, DefaultConfigPassesAndIsDeterministic) {
  const GradCheckReport a = gradcheck(default_config(0), 10);
  EXPECT_TRUE(a.passed());
  ASSERT_EQ(a.ops.size(), 4u);
  const GradCheckReport b = gradcheck(default_config(0), 10);
  for (std::size_t i = 0; i < a.ops.size(); ++i) {
    EXPECT_EQ(a.ops[i].max_rel_error, b.ops[i].max_rel_error);
    EXPECT_EQ(a.ops[i].probes, 10u);
  }
  EXPECT_NO_THROW(require_passed(a));
  EXPECT_THROW(gradcheck(default_config(0), 0), ConfigError);
}

TEST(GradCheck, FailuresNameTheOp) {
  GradCheckReport r;
  r.ops = {{"cross_entropy_loss", 100, 2e-5, true}, {"infonce_loss", 100, 3e-4, false}};
  EXPECT_FALSE(r.passed());
  try {
    require_passed(r);
    FAIL() << "expected GradCheckFailed";
  } catch (const GradCheckFailed& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("infonce_loss"), std::string::npos);
    EXPECT_EQ(what.find("cross_entropy_loss"), std::string::npos);
  }
}

}  // namespace
}  // namespace dpc
