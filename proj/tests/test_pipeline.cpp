#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "dpc/errors.hpp"
#include "dpc/hashing.hpp"
#include "dpc/pipeline.hpp"

namespace dpc {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ExperimentConfig quick_config(std::uint64_t seed) {
  ExperimentConfig c = default_config(seed);
  c.dataset.n_classes = 40;
  c.dpc.top_k = 4;  // 20 base classes hold b = 4, K = 4
  c.dataset.shots = 8;
  c.dataset.test_per_class = 5;
  c.backbone.epochs = 3;
  c.dpc.train.epochs = 2;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "dpc_tests" / name;
  fs::remove_all(d);
  return d;
}

const std::vector<std::string> kArtifacts{
    "config.ini",       "dataset.ini",        "backbone.ckpt", "loss_curve.csv",
    "dpc.ckpt",         "dpc_loss_curve.csv", "sampler_audit.csv", "report.json",
    "feature_map.csv"};

TEST(Pipeline, WritesEveryArtifactWithChecksums) {
  const fs::path dir = fresh_dir("pipe_a");
  const PipelineResult r = run_pipeline(quick_config(1), std::nullopt, dir);
  const nlohmann::json m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  std::vector<std::string> listed;
  for (const auto& a : m.at("artifacts")) {
    const std::string name = a.at("path");
    listed.push_back(name);
    EXPECT_EQ(a.at("sha256"), sha256_file(dir / name)) << name;
  }
  EXPECT_EQ(listed, kArtifacts);
  EXPECT_EQ(m.at("config_sha256"), sha256_hex(m.at("config").get<std::string>()));
  EXPECT_EQ(m.at("seeds").at("root"), 1);

  const nlohmann::json report = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_TRUE(report.contains("config"));
  EXPECT_TRUE(report.contains("backbone"));
  EXPECT_DOUBLE_EQ(report.at("omega_new_applied").get<double>(), 1e-6);
  EXPECT_NEAR(report.at("hm").get<double>(), r.report.hm, 0.005);
}

TEST(Pipeline, RerunIsBitIdenticalAndEvalFromManifestReproducesReport) {
  const fs::path a = fresh_dir("pipe_b1"), b = fresh_dir("pipe_b2");
  run_pipeline(quick_config(2), std::nullopt, a);
  run_pipeline(quick_config(2), std::nullopt, b);
  for (const std::string& name : kArtifacts) EXPECT_EQ(slurp(a / name), slurp(b / name)) << name;
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));

  const fs::path out = a / "report_again.json";
  eval_from_manifest(a / "manifest.json", out);
  EXPECT_EQ(slurp(out), slurp(a / "report.json"));
}

TEST(Pipeline, ManifestDetectsTamperedArtifacts) {
  const fs::path dir = fresh_dir("pipe_c");
  run_pipeline(quick_config(3), std::nullopt, dir);
  std::ofstream(dir / "dpc.ckpt", std::ios::app) << "\n# edited\n";
  EXPECT_THROW(eval_from_manifest(dir / "manifest.json", dir / "r.json"), ConfigError);
}

TEST(Pipeline, EpochBudgetSplitsStages) {
  const fs::path dir = fresh_dir("pipe_d");
  run_pipeline(quick_config(4), 6, dir);
  const ExperimentConfig used = load_config(dir / "config.ini");
  EXPECT_EQ(used.backbone.epochs, 3u);
  EXPECT_EQ(used.dpc.train.epochs, 3u);
  const nlohmann::json m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(m.at("epoch_budget"), 6);
}

TEST(Pipeline, InvalidConfigIsRejectedBeforeAnyWork) {
  ExperimentConfig c = quick_config(5);
  c.dpc.top_k = 30;
  const fs::path dir = fresh_dir("pipe_e");
  EXPECT_THROW(run_pipeline(c, std::nullopt, dir), BatchExceedsBaseClasses);
  EXPECT_FALSE(fs::exists(dir / "manifest.json"));
}

TEST(Pipeline, OutputDirectoryOverride) {
  ExperimentConfig c = quick_config(6);
  c.output_dir = "from_config";
  ::unsetenv("DPC_OUTPUT_DIR");
  EXPECT_EQ(resolve_output_dir(c), fs::path("from_config"));
  ::setenv("DPC_OUTPUT_DIR", "/tmp/from_env", 1);
  EXPECT_EQ(resolve_output_dir(c), fs::path("/tmp/from_env"));
  ::unsetenv("DPC_OUTPUT_DIR");
}

TEST(Pipeline, InferencePromptsFollowToggles) {
  PromptState p;
  p.text = Matrix(2, 3, 0.0);
  DualPromptState d = make_dual(p, 0.25, 0.0);
  d.parallel.text = Matrix(2, 3, 1.0);
  auto [b, n] = inference_prompts(d, Toggles{});
  EXPECT_EQ(b.text, Matrix(2, 3, 0.25));
  EXPECT_EQ(n.text, p.text);
  std::tie(b, n) = inference_prompts(d, Toggles{true, false, false});
  EXPECT_EQ(b.text, d.parallel.text);
  EXPECT_EQ(n.text, d.parallel.text);
  std::tie(b, n) = inference_prompts(d, Toggles{true, true, false});
  EXPECT_EQ(n.text, Matrix(2, 3, 0.25));
}

}  // namespace
}  // namespace dpc
