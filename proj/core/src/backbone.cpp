#include "dpc/backbone.hpp"

#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "dpc/errors.hpp"
#include "dpc/numerics.hpp"
#include "dpc/rng.hpp"

namespace dpc {

void validate_train_config(const TrainConfig& c, const std::string& stage) {
  if (c.epochs < 1) throw ConfigError(fmt::format("{}: epochs must be >= 1", stage));
  if (!(c.lr >= 0.0) || !std::isfinite(c.lr)) {
    throw ConfigError(fmt::format("{}: lr must be finite and >= 0", stage));
  }
  if (c.batch_size < 1) throw ConfigError(fmt::format("{}: batch_size must be >= 1", stage));
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) {
    throw ConfigError(fmt::format("{}: momentum must lie in [0, 1)", stage));
  }
  if (!(c.tau > 0.0)) throw NonPositiveTemperature(fmt::format("{}: tau must be > 0", stage));
}

PromptState initial_prompt(const SyntheticDataset& ds, const PromptConfig& config,
                           std::uint64_t seed) {
  if (config.length == 0) throw ConfigError("prompt length must be >= 1");
  if (config.visual && config.visual_length == 0) {
    throw ConfigError("visual prompt length must be >= 1 when visual prompts are on");
  }
  const std::size_t d_e = ds.config.d_e;
  Rng rng(seed, "prompt/init");
  PromptState p;
  if (config.init == PromptInit::gaussian) {
    p.text = rng.gaussian_matrix(config.length, d_e, config.init_std);
  } else {
    const Matrix mean = sum_rows(ds.split_tokens(Split::base)) *
                        (1.0 / static_cast<double>(ds.n_base()));
    p.text = Matrix(config.length, d_e);
    for (std::size_t r = 0; r < config.length; ++r)
      std::copy(mean.values().begin(), mean.values().end(), p.text.row(r).begin());
  }
  if (config.visual) p.visual = rng.gaussian_matrix(config.visual_length, d_e, config.init_std);
  return p;
}

double cross_entropy_loss(const Matrix& logits, std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows()) {
    throw DimensionMismatch(
        fmt::format("cross_entropy_loss: {} labels for {} rows", labels.size(), logits.rows()));
  }
  if (labels.empty()) throw DimensionMismatch("cross_entropy_loss: empty batch");
  const Matrix lp = log_softmax_rows(logits, 1.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= logits.cols()) {
      throw LabelOutOfRange(
          fmt::format("cross_entropy_loss: label {} out of {} classes", labels[i], logits.cols()));
    }
    acc -= lp(i, labels[i]);
  }
  return acc / static_cast<double>(labels.size());
}

void SgdMomentum::step(Matrix& param, const Matrix& grad) {
  if (velocity_.empty()) velocity_ = Matrix(param.rows(), param.cols());
  velocity_ *= momentum_;
  velocity_ += grad;
  param -= velocity_ * lr_;
}

Matrix train_image_features(const FrozenEncoders& enc, const SyntheticDataset& ds,
                            const std::vector<std::size_t>& images) {
  return encode_images(enc, nullptr, patch_sums(ds.train, images), ds.config.n_patches);
}

namespace {

std::vector<std::size_t> local_labels(const SyntheticDataset& ds,
                                      std::span<const std::size_t> labels) {
  std::vector<std::size_t> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!ds.is_base(labels[i])) {
      throw LabelOutOfRange(fmt::format("class {} is not a base class", labels[i]));
    }
    out[i] = ds.local_index(labels[i]);
  }
  return out;
}

struct TapedLoss {
  ad::Var loss;
  ad::Var text;
  ad::Var visual;
};

// `batch_image_feats`, when given, holds precomputed prompt-free features of
// the batch images and is used whenever there is no visual prompt.
TapedLoss taped_backbone_loss(ad::Tape& tape, const FrozenEncoders& enc, const SyntheticDataset& ds,
                              const Matrix& base_tokens, const PromptState& prompt,
                              const Matrix* batch_image_feats, std::span<const std::size_t> images,
                              std::span<const std::size_t> local, double tau) {
  TapedLoss out;
  out.text = tape.parameter(prompt.text);
  ad::Var text_feats = ad::encode_texts(tape, enc, out.text, base_tokens);
  ad::Var image_feats;
  const std::vector<std::size_t> idx(images.begin(), images.end());
  if (prompt.visual) {
    out.visual = tape.parameter(*prompt.visual);
    image_feats = ad::encode_images(tape, enc, out.visual, patch_sums(ds.train, idx),
                                    ds.config.n_patches);
  } else if (batch_image_feats != nullptr) {
    image_feats = tape.constant(*batch_image_feats);
  } else {
    image_feats = tape.constant(train_image_features(enc, ds, idx));
  }
  ad::Var logits = ad::scale(
      ad::matmul_nt(ad::l2_normalize_rows(image_feats), ad::l2_normalize_rows(text_feats)),
      1.0 / tau);
  out.loss = ad::nll_mean(ad::log_softmax_rows(logits), local);
  return out;
}

}  // namespace

double backbone_loss(const FrozenEncoders& enc, const SyntheticDataset& ds,
                     const PromptState& prompt, std::span<const std::size_t> images,
                     std::span<const std::size_t> labels, double tau) {
  const std::vector<std::size_t> idx(images.begin(), images.end());
  const Matrix image_feats =
      encode_images(enc, prompt.visual_or_null(), patch_sums(ds.train, idx), ds.config.n_patches);
  const Matrix text_feats = encode_texts(enc, prompt.text, ds.split_tokens(Split::base));
  return cross_entropy_loss(similarity_logits(image_feats, text_feats, tau),
                            local_labels(ds, labels));
}

LossAndGrad backbone_loss_and_grad(const FrozenEncoders& enc, const SyntheticDataset& ds,
                                   const PromptState& prompt, std::span<const std::size_t> images,
                                   std::span<const std::size_t> labels, double tau) {
  ad::Tape tape;
  const std::vector<std::size_t> local = local_labels(ds, labels);
  TapedLoss t = taped_backbone_loss(tape, enc, ds, ds.split_tokens(Split::base), prompt, nullptr,
                                    images, local, tau);
  tape.backward(t.loss);
  LossAndGrad out{t.loss.value()(0, 0), t.text.grad(), {}};
  if (t.visual.valid()) out.visual_grad = t.visual.grad();
  return out;
}

BackboneResult train_backbone(const SyntheticDataset& ds, const FrozenEncoders& enc,
                              const PromptState& init, const TrainConfig& config,
                              const std::string& stage) {
  validate_train_config(config, stage);
  const FewShotSplit split = few_shot_split(ds);
  const Matrix base_tokens = ds.split_tokens(Split::base);
  const Matrix cached = train_image_features(enc, ds, split.images);
  // Position in `split` for each train image, so cached rows can be gathered.
  std::vector<std::size_t> order(split.images.size());
  std::iota(order.begin(), order.end(), 0);

  BackboneResult result;
  result.tuned = init;
  result.tuned.frozen = false;
  SgdMomentum text_opt(config.lr, config.momentum);
  SgdMomentum visual_opt(config.lr, config.momentum);
  Rng shuffle_rng(config.seed, stage + "/shuffle");

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<std::size_t> rows, images, local;
      for (std::size_t i = start; i < end; ++i) {
        rows.push_back(order[i]);
        images.push_back(split.images[order[i]]);
        local.push_back(ds.local_index(split.labels[order[i]]));
      }
      ad::Tape tape;
      // Cached features are indexed by split position, not train index.
      const Matrix batch_feats = result.tuned.visual ? Matrix() : gather_rows(cached, rows);
      TapedLoss t = taped_backbone_loss(tape, enc, ds, base_tokens, result.tuned, &batch_feats,
                                        images, local, config.tau);
      const double loss = t.loss.value()(0, 0);
      if (!std::isfinite(loss)) throw DivergedLoss(stage, epoch + 1, result.steps, loss);
      tape.backward(t.loss);
      text_opt.step(result.tuned.text, t.text.grad());
      if (result.tuned.visual) visual_opt.step(*result.tuned.visual, t.visual.grad());
      epoch_loss += loss;
      ++batches;
      ++result.steps;
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(batches));
  }
  result.tuned.frozen = true;
  return result;
}

}  // namespace dpc
