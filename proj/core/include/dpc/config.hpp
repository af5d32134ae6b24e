#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dpc/backbone.hpp"
#include "dpc/data.hpp"
#include "dpc/dhno.hpp"
#include "dpc/encoders.hpp"

// Experiment configuration file. INI sections and keys (defaults in brackets):
//
//   [experiment] seed [0], output_dir [out]
//   [dataset]    n_classes [128], shots [16], test_per_class [20], d_z [8],
//                n_patches [4], sigma [0.6], token_noise [0.3],
//                image_distortion [0.0], modality_gap [0.25], seed
//   [encoder]    d_e [16], d_h [32], d [8], tower_coupling [1], seed,
//                prompt_length [4], visual_prompt_length [2],
//                prompt_init [gaussian|template], prompt_init_std [0.02]
//   [backbone]   epochs [20], lr [0.002], batch_size [32], momentum [0.9],
//                temperature [0.01], seed
//   [dpc]        epochs [20], lr [0.002], batch_size [4], momentum [0.9],
//                top_k [8], omega_base [0.2], omega_new [1e-6],
//                loss [infonce|cross_entropy], seed
//   [toggles]    visual_prompts [false], dhno [true], weighting [true],
//                decoupling [true]
//
// Unknown sections or keys are errors. Absent per-stage seeds are derived
// from the experiment seed with the labels "dataset", "encoder", "backbone"
// and "dpc". The stage-2 temperature is the backbone temperature.

namespace dpc {

struct Toggles {
  bool dhno = true;
  bool weighting = true;
  bool decoupling = true;

  friend bool operator==(const Toggles&, const Toggles&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  DatasetConfig dataset;
  EncoderConfig encoder;
  PromptConfig prompt;
  TrainConfig backbone;
  DpcConfig dpc;
  Toggles toggles;
};

/// Defaults with every per-stage seed derived from `seed`.
ExperimentConfig default_config(std::uint64_t seed = 0);

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every field materialised, in a fixed key order.
std::string to_ini(const ExperimentConfig& config);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

/// Cross-field checks: batch constraint, omega ranges, matching dims.
void validate(const ExperimentConfig& config);

/// Splits a total epoch budget half and half between the two stages.
/// Throws ConfigError for budgets below 2.
std::pair<std::size_t, std::size_t> split_epoch_budget(std::size_t total);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace dpc
