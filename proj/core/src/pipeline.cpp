#include "dpc/pipeline.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>

#include <fmt/format.h>
#include <fmt/os.h>
#include <nlohmann/json.hpp>

#include "dpc/errors.hpp"
#include "dpc/hashing.hpp"
#include "dpc/rng.hpp"

namespace dpc {

using nlohmann::json;

namespace fs = std::filesystem;

std::filesystem::path resolve_output_dir(const ExperimentConfig& config) {
  if (const char* env = std::getenv("DPC_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return config.output_dir;
}

std::pair<PromptState, PromptState> inference_prompts(const DualPromptState& dual,
                                                      const Toggles& toggles) {
  PromptState base = toggles.weighting ? weight_mix(dual, dual.omega_base) : dual.parallel;
  base.frozen = false;
  PromptState fresh = toggles.decoupling ? new_class_prompt(dual) : base;
  return {std::move(base), std::move(fresh)};
}

namespace {

double round2(double v) { return std::round(v * 100.0) / 100.0; }

json scores_json(const EvalReport& r) {
  return {{"base_acc", round2(r.base_acc)}, {"new_acc", round2(r.new_acc)}, {"hm", round2(r.hm)}};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write {}", path.string()));
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot open {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string full_report_json(const EvalReport& report, const EvalReport& backbone,
                             const ExperimentConfig& config, const DualPromptState& dual) {
  json j = json::parse(report_json(report, config, dual));
  j["backbone"] = scores_json(backbone);
  return j.dump(2) + "\n";
}

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const DivergedLoss&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(fmt::format("stage {}: {}", name, e.what()));
  }
}

EvalReport backbone_eval(const FrozenEncoders& enc, const SyntheticDataset& ds,
                         const Checkpoint& backbone) {
  return evaluate_prompts(enc, ds, backbone.tuned, backbone.tuned, backbone.config.backbone.tau);
}

}  // namespace

std::string report_json(const EvalReport& report, const ExperimentConfig& config,
                        const DualPromptState& dual) {
  json per_class = json::array();
  for (const ClassScore& s : report.per_class) {
    per_class.push_back({{"class", s.class_id},
                         {"split", split_name(s.split)},
                         {"correct", s.correct},
                         {"total", s.total},
                         {"accuracy", round2(s.accuracy)}});
  }
  json j = scores_json(report);
  j["omega_base"] = dual.omega_base;
  j["omega_new"] = dual.omega_new;
  j["omega_new_applied"] = effective_omega_new(dual.omega_new);
  j["seed"] = config.seed;
  j["per_class"] = std::move(per_class);
  j["config"] = to_ini(config);
  return j.dump(2) + "\n";
}

StageOutput run_backbone_stage(const SyntheticDataset& ds, const FrozenEncoders& enc,
                               const ExperimentConfig& config) {
  const PromptState init = initial_prompt(ds, config.prompt, config.backbone.seed);
  BackboneResult r = train_backbone(ds, enc, init, config.backbone);
  StageOutput out;
  out.checkpoint.stage = Stage::backbone;
  out.checkpoint.config = config;
  out.checkpoint.tuned = r.tuned;
  out.checkpoint.omega_base = config.dpc.omega_base;
  out.checkpoint.omega_new = config.dpc.omega_new;
  out.checkpoint.training = {config.backbone.epochs, config.backbone.lr, config.backbone.seed,
                             r.steps};
  out.loss_curve = std::move(r.loss_curve);
  return out;
}

StageOutput run_dpc_stage(const SyntheticDataset& ds, const FrozenEncoders& enc,
                          const Checkpoint& backbone, const ExperimentConfig& config) {
  StageOutput out;
  out.checkpoint.stage = Stage::dpc;
  out.checkpoint.config = config;
  out.checkpoint.tuned = backbone.tuned;
  out.checkpoint.omega_base = config.dpc.omega_base;
  out.checkpoint.omega_new = config.dpc.omega_new;
  std::size_t steps = 0;
  if (config.toggles.dhno) {
    DpcResult r = train_dpc(ds, enc, backbone.tuned, config.dpc);
    out.checkpoint.parallel = r.dual.parallel;
    out.loss_curve = std::move(r.loss_curve);
    out.audit = std::move(r.audit);
    steps = r.steps;
  } else {
    TrainConfig cont = config.backbone;
    cont.epochs = config.dpc.train.epochs;
    cont.lr = config.dpc.train.lr;
    cont.seed = config.dpc.train.seed;
    BackboneResult r = train_backbone(ds, enc, backbone.tuned, cont, "continuation");
    out.checkpoint.parallel = clone_parallel(r.tuned);
    out.loss_curve = std::move(r.loss_curve);
    steps = r.steps;
  }
  out.checkpoint.training = {config.dpc.train.epochs, config.dpc.train.lr, config.dpc.train.seed,
                             steps};
  return out;
}

void write_loss_curve_csv(const fs::path& path, const std::vector<double>& curve) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto out = fmt::output_file(path.string());
  out.print("epoch,mean_loss\n");
  for (std::size_t i = 0; i < curve.size(); ++i) out.print("{},{:.17g}\n", i + 1, curve[i]);
}

void write_audit_csv(const fs::path& path, const std::vector<SamplerAuditRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto out = fmt::output_file(path.string());
  out.print("epoch,step,batch_size,hard_similarity,random_similarity\n");
  for (const SamplerAuditRow& r : rows)
    out.print("{},{},{},{:.17g},{:.17g}\n", r.epoch + 1, r.step, r.size, r.hard_similarity,
              r.random_similarity);
}

PipelineResult run_pipeline(const ExperimentConfig& input, std::optional<std::size_t> epoch_budget,
                            std::optional<fs::path> output_dir) {
  ExperimentConfig config = input;
  if (epoch_budget) {
    const auto [first, second] = split_epoch_budget(*epoch_budget);
    config.backbone.epochs = first;
    config.dpc.train.epochs = second;
  }
  validate(config);
  PipelineResult result;
  result.output_dir = output_dir ? *output_dir : resolve_output_dir(config);
  const fs::path dir = result.output_dir;
  fs::create_directories(dir);

  const auto artifact = [&](const std::string& name) {
    result.artifacts.push_back(dir / name);
    return dir / name;
  };

  save_config(artifact("config.ini"), config);
  const SyntheticDataset ds = stage("gen-data", [&] { return generate(config.dataset); });
  save_dataset_file(artifact("dataset.ini"), ds);
  const FrozenEncoders enc(config.encoder);

  const StageOutput backbone =
      stage("train-backbone", [&] { return run_backbone_stage(ds, enc, config); });
  save_checkpoint(artifact("backbone.ckpt"), backbone.checkpoint);
  write_loss_curve_csv(artifact("loss_curve.csv"), backbone.loss_curve);

  const StageOutput dpc =
      stage("train-dpc", [&] { return run_dpc_stage(ds, enc, backbone.checkpoint, config); });
  save_checkpoint(artifact("dpc.ckpt"), dpc.checkpoint);
  write_loss_curve_csv(artifact("dpc_loss_curve.csv"), dpc.loss_curve);
  write_audit_csv(artifact("sampler_audit.csv"), dpc.audit);

  const DualPromptState dual = dpc.checkpoint.dual();
  stage("eval", [&] {
    result.backbone_report = backbone_eval(enc, ds, backbone.checkpoint);
    const auto [base_prompt, new_prompt] = inference_prompts(dual, config.toggles);
    result.report = evaluate_prompts(enc, ds, base_prompt, new_prompt, config.backbone.tau);
    return 0;
  });
  write_text(artifact("report.json"),
             full_report_json(result.report, result.backbone_report, config, dual));

  Rng random_rng(config.seed, "analysis/random");
  const Matrix random_prompt = random_rng.gaussian_matrix(
      dual.tuned.text.rows(), dual.tuned.text.cols(), config.prompt.init_std);
  result.feature_map = feature_map_report(dual.tuned.text, dual.parallel.text, random_prompt);
  write_feature_map_csv(artifact("feature_map.csv"), result.feature_map);

  json manifest;
  manifest["format_version"] = 1;
  manifest["config"] = to_ini(config);
  manifest["config_sha256"] = sha256_hex(to_ini(config));
  manifest["epoch_budget"] = epoch_budget ? json(*epoch_budget) : json(nullptr);
  manifest["seeds"] = {{"root", config.seed},
                       {"dataset", config.dataset.seed},
                       {"encoder", config.encoder.seed},
                       {"backbone", config.backbone.seed},
                       {"dpc", config.dpc.train.seed}};
  json files = json::array();
  for (const fs::path& p : result.artifacts)
    files.push_back({{"path", p.filename().string()}, {"sha256", sha256_file(p)}});
  manifest["artifacts"] = std::move(files);
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return result;
}

namespace {

struct ManifestView {
  fs::path dir;
  json data;
  fs::path file(const std::string& name) const { return dir / name; }
};

ManifestView read_manifest(const fs::path& path) {
  ManifestView m{path.parent_path(), json::parse(read_text(path))};
  if (m.data.value("format_version", 0) != 1) {
    throw ConfigError(fmt::format("{}: unsupported manifest", path.string()));
  }
  for (const json& a : m.data.at("artifacts")) {
    const fs::path p = m.file(a.at("path").get<std::string>());
    if (sha256_file(p) != a.at("sha256").get<std::string>()) {
      throw ConfigError(fmt::format("{}: checksum mismatch", p.string()));
    }
  }
  return m;
}

}  // namespace

EvalReport eval_from_manifest(const fs::path& manifest, const fs::path& report_path) {
  const ManifestView m = read_manifest(manifest);
  const ExperimentConfig config = parse_config(m.data.at("config").get<std::string>());
  const SyntheticDataset ds = load_dataset_file(m.file("dataset.ini"));
  const FrozenEncoders enc(config.encoder);
  const Checkpoint backbone = load_checkpoint(m.file("backbone.ckpt"));
  const Checkpoint dpc = load_checkpoint(m.file("dpc.ckpt"));
  const DualPromptState dual = dpc.dual();
  const auto [base_prompt, new_prompt] = inference_prompts(dual, config.toggles);
  const EvalReport report = evaluate_prompts(enc, ds, base_prompt, new_prompt, config.backbone.tau);
  write_text(report_path,
             full_report_json(report, backbone_eval(enc, ds, backbone), config, dual));
  return report;
}

EvalReport eval_checkpoint(const fs::path& ckpt_path, const fs::path& dataset,
                           const fs::path& report_path) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const SyntheticDataset ds = load_dataset_file(dataset);
  if (!(ds.config == ckpt.config.dataset)) {
    throw ConfigError("dataset file does not match the checkpoint's dataset config");
  }
  const FrozenEncoders enc(ckpt.config.encoder);
  const DualPromptState dual = ckpt.dual();
  const auto [base_prompt, new_prompt] = inference_prompts(dual, ckpt.config.toggles);
  const EvalReport report =
      evaluate_prompts(enc, ds, base_prompt, new_prompt, ckpt.config.backbone.tau);
  write_text(report_path, report_json(report, ckpt.config, dual));
  return report;
}

}  // namespace dpc
