#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "dpc/config.hpp"
#include "dpc/prompts.hpp"

// Checkpoint file (INI, format_version 1):
//   [checkpoint] format_version, stage (backbone|dpc), omega_base, omega_new
//   [prompt]     M, M_v, d_e, tuned_text_*, tuned_visual_*,
//                parallel_text_*, parallel_visual_* (dpc stage only)
//   [training]   epochs, lr, seed, steps
//   [config]     the resolved experiment config, keys "section/key"
// Matrices are stored as "<name>_shape = RxC" plus one line per row with
// 17 significant digits, which round-trips doubles exactly.

namespace dpc {

inline constexpr int kCheckpointFormatVersion = 1;

enum class Stage { backbone, dpc };

struct TrainingMeta {
  std::size_t epochs = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  std::size_t steps = 0;

  friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

struct Checkpoint {
  Stage stage = Stage::backbone;
  ExperimentConfig config;
  PromptState tuned;
  std::optional<PromptState> parallel;  // dpc stage only
  double omega_base = kDefaultOmegaBase;
  double omega_new = kDefaultOmegaNew;
  TrainingMeta training;

  /// Dual state for evaluation; a backbone checkpoint yields P' = P.
  DualPromptState dual() const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws ConfigError for unknown versions, missing fields or shape errors.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dpc
