#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dpc/backbone.hpp"
#include "dpc/checkpoint.hpp"
#include "dpc/config.hpp"
#include "dpc/dhno.hpp"
#include "dpc/eval.hpp"

namespace dpc {

/// Output directory: DPC_OUTPUT_DIR when set, otherwise config.output_dir.
std::filesystem::path resolve_output_dir(const ExperimentConfig& config);

/// Prompts used at inference for the enabled toggles:
///   base = weighting ? mix(omega_b) : P';  new = decoupling ? P~_n : base.
std::pair<PromptState, PromptState> inference_prompts(const DualPromptState& dual,
                                                      const Toggles& toggles);

/// Report JSON: accuracies (percent, 2 decimals), per-class scores, omegas,
/// seed and the resolved config. No timestamps, so reruns compare byte-equal.
std::string report_json(const EvalReport& report, const ExperimentConfig& config,
                        const DualPromptState& dual);

struct StageOutput {
  Checkpoint checkpoint;
  std::vector<double> loss_curve;
  std::vector<SamplerAuditRow> audit;
};

StageOutput run_backbone_stage(const SyntheticDataset& ds, const FrozenEncoders& enc,
                               const ExperimentConfig& config);
/// Stage 2 from a stage-1 checkpoint. With toggles.dhno off, P' is trained by
/// cross-entropy continuation instead of the hard-negative loss.
StageOutput run_dpc_stage(const SyntheticDataset& ds, const FrozenEncoders& enc,
                          const Checkpoint& backbone, const ExperimentConfig& config);

void write_loss_curve_csv(const std::filesystem::path& path, const std::vector<double>& curve);
void write_audit_csv(const std::filesystem::path& path, const std::vector<SamplerAuditRow>& rows);

struct PipelineResult {
  std::filesystem::path output_dir;
  EvalReport backbone_report;
  EvalReport report;
  FeatureMapReport feature_map;
  std::vector<std::filesystem::path> artifacts;
};

/// gen-data, train-backbone, train-dpc, eval and manifest in one go. With an
/// epoch budget the two stages get budget/2 and budget - budget/2 epochs.
/// Stage failures are rethrown as Error prefixed with the stage name.
PipelineResult run_pipeline(const ExperimentConfig& config,
                            std::optional<std::size_t> epoch_budget = std::nullopt,
                            std::optional<std::filesystem::path> output_dir = std::nullopt);

/// Rebuilds the report from the artifacts listed in a manifest after
/// verifying their checksums, and writes it to `report_path`.
EvalReport eval_from_manifest(const std::filesystem::path& manifest,
                              const std::filesystem::path& report_path);

/// Evaluates a checkpoint against a dataset file and writes report JSON.
EvalReport eval_checkpoint(const std::filesystem::path& ckpt, const std::filesystem::path& dataset,
                           const std::filesystem::path& report_path);

}  // namespace dpc
