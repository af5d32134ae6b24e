#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpc/backbone.hpp"
#include "dpc/data.hpp"
#include "dpc/dhno.hpp"
#include "dpc/encoders.hpp"
#include "dpc/prompts.hpp"

namespace dpc {

struct ClassScore {
  std::size_t class_id = 0;
  Split split = Split::base;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;  // percent
};

struct EvalReport {
  double base_acc = 0.0;  // percent
  double new_acc = 0.0;
  double hm = 0.0;
  std::vector<ClassScore> per_class;
};

/// Predicted global class ids for the test images of `split`, in test order,
/// scoring only that split's classes.
std::vector<std::size_t> classify_with(const FrozenEncoders& enc, const SyntheticDataset& ds,
                                       const PromptState& prompt, Split split, double tau);

/// Base split uses weight_mix(omega_base); new split uses new_class_prompt.
std::vector<std::size_t> classify(const DualPromptState& dual, const FrozenEncoders& enc,
                                  const SyntheticDataset& ds, Split split, double tau);

/// Accuracy in percent plus per-class scores for a prediction vector.
double split_accuracy(const SyntheticDataset& ds, Split split,
                      const std::vector<std::size_t>& predictions,
                      std::vector<ClassScore>* per_class = nullptr);

/// 2 b n / (b + n). Inputs in [0, 100]; throws BothZero when both are 0.
double harmonic_mean(double base_acc, double new_acc);

EvalReport evaluate_prompts(const FrozenEncoders& enc, const SyntheticDataset& ds,
                            const PromptState& base_prompt, const PromptState& new_prompt,
                            double tau);
EvalReport evaluate(const DualPromptState& dual, const FrozenEncoders& enc,
                    const SyntheticDataset& ds, double tau);

struct SweepRow {
  double value = 0.0;
  double base_acc = 0.0;
  double new_acc = 0.0;
  double hm = 0.0;
};

struct SweepResult {
  std::string param;
  Split split = Split::base;
  std::vector<SweepRow> rows;
  // Adjacent pairs along the grid where the swept split's accuracy did not rise.
  std::size_t non_increasing_steps = 0;
  bool monotone_non_increasing = false;
};

inline const std::vector<double> kOmegaBaseGrid{0.0, 0.1, 0.2, 0.3, 0.5, 1.0};
inline const std::vector<double> kOmegaNewGrid{0.0, 0.01, 0.02, 0.05, 0.1, 0.2};

/// One classify run per omega on `split`; the other split keeps the dual's
/// configured weight. Omega values must lie in [0, 1].
SweepResult sweep_omega(const DualPromptState& dual, const FrozenEncoders& enc,
                        const SyntheticDataset& ds, const std::vector<double>& omegas, Split split,
                        double tau);

/// CSV with header param,value,base_acc,new_acc,hm,seed.
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepResult>& sweeps,
                     std::uint64_t seed);

struct FeatureMapReport {
  std::vector<double> tuned_vs_parallel;  // per prompt row
  std::vector<double> tuned_vs_random;
  double mean_tuned_vs_parallel = 0.0;
  double mean_tuned_vs_random = 0.0;
};

FeatureMapReport feature_map_report(const Matrix& tuned, const Matrix& parallel,
                                    const Matrix& random_init);
void write_feature_map_csv(const std::filesystem::path& path, const FeatureMapReport& report);

struct AblationRow {
  std::string name;
  bool two_step = false;
  bool dhno = false;
  bool weighting = false;
  bool decoupling = false;
  double base_acc = 0.0;
  double new_acc = 0.0;
  double hm = 0.0;
};

struct AblationInputs {
  PromptState tuned;          // stage-1 result
  TrainConfig continuation;   // cross-entropy continuation (rows 1 and 4)
  DpcConfig dpc;              // hard-negative stage (rows 2, 3, 5)
};

/// Component grid:
///   (0) backbone P for both splits
///   (1) P continued with cross-entropy for both splits
///   (2) DHNO-trained P' for both splits
///   (3) mix(P, P', omega_b) for both splits
///   (4) cross-entropy-continued P' with weighting and decoupling
///   (5) full method
///   (5-ce) full method with the hard-batch loss replaced by cross-entropy
std::vector<AblationRow> ablation_matrix(const SyntheticDataset& ds, const FrozenEncoders& enc,
                                         const AblationInputs& inputs);

}  // namespace dpc
