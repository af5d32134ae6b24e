#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpc/autodiff.hpp"
#include "dpc/backbone.hpp"
#include "dpc/data.hpp"
#include "dpc/encoders.hpp"
#include "dpc/prompts.hpp"
#include "dpc/rng.hpp"

namespace dpc {

/// Deduplicated hard-negative pairs. Order: ground truths in batch order,
/// then each item's negatives in rank order; first occurrence wins.
struct HardNegativeBatch {
  std::vector<std::size_t> labels;  // global base-class ids, pairwise distinct
  std::vector<std::size_t> images;  // indices into SyntheticDataset::train
  std::vector<bool> positive;

  std::size_t size() const noexcept { return labels.size(); }
};

/// One-hot rows e_{i_j} over the base classes, stored as column indices.
struct SelectionMatrix {
  std::size_t n_base = 0;
  std::vector<std::size_t> cols;

  static SelectionMatrix from_batch(const SyntheticDataset& ds, const HardNegativeBatch& batch);
  Matrix dense() const;
};

/// Base-class ranking of one image: indices into ds.base_ids sorted by logit,
/// descending, ties to the lower class id.
std::vector<std::size_t> rank_base_classes(std::span<const double> logits);

/// Top-K sampling with the tuned prompt. `tuned_text_feats` are the tuned
/// prompt's base-class text features and `gt_image_feats` the ground-truth
/// images' features under the tuned prompt (one row per batch item).
/// Negative images are uniform draws from the label's train images.
HardNegativeBatch sample_hard_negatives(const SyntheticDataset& ds,
                                        const Matrix& tuned_text_feats,
                                        const Matrix& gt_image_feats,
                                        std::span<const std::size_t> gt_images,
                                        std::span<const std::size_t> gt_labels, std::size_t k,
                                        double tau, Rng& rng);

/// Convenience form that encodes with the tuned prompt itself.
HardNegativeBatch sample_hard_negatives(const SyntheticDataset& ds, const FrozenEncoders& enc,
                                        const PromptState& tuned,
                                        std::span<const std::size_t> gt_images,
                                        std::span<const std::size_t> gt_labels, std::size_t k,
                                        double tau, Rng& rng);

/// Encodes all base classes with `prompt`, normalises rows, then selects.
Matrix filter_features(const FrozenEncoders& enc, const Matrix& prompt, const Matrix& base_tokens,
                       const SelectionMatrix& selection);

/// Symmetric InfoNCE over paired rows. Image rows are normalised here; text
/// rows are expected to be unit length already. Throws DegenerateBatch for L < 2.
double infonce_loss(const Matrix& text_feats, const Matrix& image_feats, double tau);
/// Same loss from a precomputed (L x L) similarity matrix S(i, j) = t_i . v_j.
double infonce_from_similarity(const Matrix& sim, double tau);

/// Mean pairwise cosine between the rows of `feats` selected by `rows`.
double mean_pairwise_cosine(const Matrix& feats, std::span<const std::size_t> rows);

namespace ad {

Var filter_features(Tape& tape, const FrozenEncoders& enc, Var prompt, const Matrix& base_tokens,
                    const SelectionMatrix& selection);
Var infonce_loss(Var text_feats, Var image_feats, double tau);

}  // namespace ad

enum class DpcLoss { infonce, cross_entropy };

struct DpcConfig {
  TrainConfig train{20, 0.002, 4, 0.9, kDefaultTemperature, 0};
  std::size_t top_k = 8;
  double omega_base = kDefaultOmegaBase;
  double omega_new = kDefaultOmegaNew;
  DpcLoss loss = DpcLoss::infonce;
};

struct SamplerAuditRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::size_t size = 0;
  double hard_similarity = 0.0;
  double random_similarity = 0.0;
};

struct DpcResult {
  DualPromptState dual;
  std::vector<double> loss_curve;  // mean step loss per epoch
  std::vector<SamplerAuditRow> audit;
  std::size_t steps = 0;
};

/// Loss of the parallel prompt on one hard-negative batch. The parallel prompt
/// enters through mix(omega_base) followed by its inverse whenever omega_base > 0.
double dpc_batch_loss(const FrozenEncoders& enc, const SyntheticDataset& ds,
                      const DualPromptState& dual, const HardNegativeBatch& batch,
                      const DpcConfig& config);
LossAndGrad dpc_batch_loss_and_grad(const FrozenEncoders& enc, const SyntheticDataset& ds,
                                    const DualPromptState& dual, const HardNegativeBatch& batch,
                                    const DpcConfig& config);

/// Stage-2 optimisation of P' with the tuned prompt frozen. Streams (under
/// config.train.seed): "dpc/shuffle", "dpc/negatives", "dpc/audit".
DpcResult train_dpc(const SyntheticDataset& ds, const FrozenEncoders& enc, const PromptState& tuned,
                    const DpcConfig& config);

}  // namespace dpc
