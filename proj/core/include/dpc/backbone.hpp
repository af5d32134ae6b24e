#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpc/autodiff.hpp"
#include "dpc/data.hpp"
#include "dpc/encoders.hpp"
#include "dpc/prompts.hpp"

namespace dpc {

inline constexpr double kDefaultTemperature = 0.01;

struct TrainConfig {
  std::size_t epochs = 20;
  double lr = 0.002;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  double tau = kDefaultTemperature;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Throws ConfigError unless lr >= 0, epochs >= 1, batch >= 1, tau > 0.
void validate_train_config(const TrainConfig& c, const std::string& stage);

enum class PromptInit { gaussian, template_mean };

struct PromptConfig {
  std::size_t length = 4;         // M
  std::size_t visual_length = 2;  // M_v
  bool visual = false;
  PromptInit init = PromptInit::gaussian;
  double init_std = 0.02;

  friend bool operator==(const PromptConfig&, const PromptConfig&) = default;
};

/// Gaussian(0, init_std) rows, or every row set to the mean base-class token.
/// Randomness comes from the "prompt/init" stream of `seed`.
PromptState initial_prompt(const SyntheticDataset& ds, const PromptConfig& config,
                           std::uint64_t seed);

/// Mean over rows of -log_softmax(logits)[label]. Labels index columns.
double cross_entropy_loss(const Matrix& logits, std::span<const std::size_t> labels);

/// SGD with momentum, PyTorch form: v = mu v + g; p -= lr v.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}
  void step(Matrix& param, const Matrix& grad);

 private:
  double lr_;
  double momentum_;
  Matrix velocity_;
};

/// Image features of the listed train images, without visual prompt.
Matrix train_image_features(const FrozenEncoders& enc, const SyntheticDataset& ds,
                            const std::vector<std::size_t>& images);

/// Loss of a prompt on a labelled batch of train images, scored against all
/// base classes. Labels are global class ids.
double backbone_loss(const FrozenEncoders& enc, const SyntheticDataset& ds,
                     const PromptState& prompt, std::span<const std::size_t> images,
                     std::span<const std::size_t> labels, double tau);

struct LossAndGrad {
  double loss = 0.0;
  Matrix text_grad;
  Matrix visual_grad;  // empty without a visual prompt
};
LossAndGrad backbone_loss_and_grad(const FrozenEncoders& enc, const SyntheticDataset& ds,
                                   const PromptState& prompt, std::span<const std::size_t> images,
                                   std::span<const std::size_t> labels, double tau);

struct BackboneResult {
  PromptState tuned;
  std::vector<double> loss_curve;  // mean batch loss per epoch
  std::size_t steps = 0;
};

/// Cross-entropy prompt tuning on the base few-shot split, starting from
/// `init`. Batches come from a Fisher-Yates shuffle per epoch on the
/// "backbone/shuffle" stream of config.seed. The returned prompt is frozen.
/// Throws DivergedLoss on a non-finite loss.
BackboneResult train_backbone(const SyntheticDataset& ds, const FrozenEncoders& enc,
                              const PromptState& init, const TrainConfig& config,
                              const std::string& stage = "backbone");

}  // namespace dpc
