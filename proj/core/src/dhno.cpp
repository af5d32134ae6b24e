#include "dpc/dhno.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "dpc/errors.hpp"
#include "dpc/numerics.hpp"

namespace dpc {

SelectionMatrix SelectionMatrix::from_batch(const SyntheticDataset& ds,
                                            const HardNegativeBatch& batch) {
  SelectionMatrix q;
  q.n_base = ds.n_base();
  q.cols.reserve(batch.size());
  for (std::size_t label : batch.labels) {
    if (!ds.is_base(label)) {
      throw LabelOutOfRange(fmt::format("selection: class {} is not a base class", label));
    }
    q.cols.push_back(ds.local_index(label));
  }
  return q;
}

Matrix SelectionMatrix::dense() const {
  Matrix q(cols.size(), n_base);
  for (std::size_t r = 0; r < cols.size(); ++r) q(r, cols[r]) = 1.0;
  return q;
}

std::vector<std::size_t> rank_base_classes(std::span<const double> logits) {
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&logits](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  return order;
}

HardNegativeBatch sample_hard_negatives(const SyntheticDataset& ds,
                                        const Matrix& tuned_text_feats,
                                        const Matrix& gt_image_feats,
                                        std::span<const std::size_t> gt_images,
                                        std::span<const std::size_t> gt_labels, std::size_t k,
                                        double tau, Rng& rng) {
  const std::size_t b = gt_labels.size();
  if (gt_images.size() != b || gt_image_feats.rows() != b) {
    throw DimensionMismatch("sample_hard_negatives: batch sizes disagree");
  }
  validate_batch_config(ds.n_base(), b, k);
  if (tuned_text_feats.rows() != ds.n_base()) {
    throw DimensionMismatch("sample_hard_negatives: need one text feature per base class");
  }
  const Matrix logits = similarity_logits(gt_image_feats, tuned_text_feats, tau);

  HardNegativeBatch out;
  std::vector<bool> taken(ds.n_base(), false);
  for (std::size_t i = 0; i < b; ++i) {
    if (!ds.is_base(gt_labels[i])) {
      throw LabelOutOfRange(fmt::format("ground truth {} is not a base class", gt_labels[i]));
    }
    const std::size_t local = ds.local_index(gt_labels[i]);
    if (taken[local]) continue;
    taken[local] = true;
    out.labels.push_back(gt_labels[i]);
    out.images.push_back(gt_images[i]);
    out.positive.push_back(true);
  }
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t positive = ds.local_index(gt_labels[i]);
    const std::vector<std::size_t> ranked = rank_base_classes(logits.row(i));
    const auto top_end = ranked.begin() + static_cast<std::ptrdiff_t>(k);
    const bool hit = std::find(ranked.begin(), top_end, positive) != top_end;
    // A missed positive keeps the K-1 best wrong classes; it is already present.
    std::size_t wanted = k - 1;
    for (auto it = ranked.begin(); it != ranked.end() && wanted > 0; ++it) {
      if (*it == positive) continue;
      if (!hit && it >= top_end) break;
      --wanted;
      if (taken[*it]) continue;
      taken[*it] = true;
      const std::size_t label = ds.base_ids[*it];
      const std::vector<std::size_t> pool = train_images_of(ds, label);
      out.labels.push_back(label);
      out.images.push_back(pool[rng.uniform_below(pool.size())]);
      out.positive.push_back(false);
    }
  }
  return out;
}

HardNegativeBatch sample_hard_negatives(const SyntheticDataset& ds, const FrozenEncoders& enc,
                                        const PromptState& tuned,
                                        std::span<const std::size_t> gt_images,
                                        std::span<const std::size_t> gt_labels, std::size_t k,
                                        double tau, Rng& rng) {
  const std::vector<std::size_t> idx(gt_images.begin(), gt_images.end());
  const Matrix text = encode_texts(enc, tuned.text, ds.split_tokens(Split::base));
  const Matrix images =
      encode_images(enc, tuned.visual_or_null(), patch_sums(ds.train, idx), ds.config.n_patches);
  return sample_hard_negatives(ds, text, images, gt_images, gt_labels, k, tau, rng);
}

Matrix filter_features(const FrozenEncoders& enc, const Matrix& prompt, const Matrix& base_tokens,
                       const SelectionMatrix& selection) {
  if (base_tokens.rows() != selection.n_base) {
    throw DimensionMismatch("filter_features: selection width differs from base class count");
  }
  return gather_rows(l2_normalize_rows(encode_texts(enc, prompt, base_tokens)), selection.cols);
}

double infonce_from_similarity(const Matrix& sim, double tau) {
  if (sim.rows() != sim.cols()) throw DimensionMismatch("infonce: similarity must be square");
  if (sim.rows() < 2) throw DegenerateBatch(fmt::format("infonce needs L >= 2, got {}", sim.rows()));
  const Matrix by_text = log_softmax_rows(sim, tau);
  const Matrix by_image = log_softmax_rows(transpose(sim), tau);
  double a = 0.0;
  double b = 0.0;
  for (std::size_t i = 0; i < sim.rows(); ++i) {
    a -= by_text(i, i);
    b -= by_image(i, i);
  }
  const double n = static_cast<double>(sim.rows());
  return a / n + b / n;
}

double infonce_loss(const Matrix& text_feats, const Matrix& image_feats, double tau) {
  if (!text_feats.same_shape(image_feats)) {
    throw DimensionMismatch("infonce: text and image features must pair row by row");
  }
  if (text_feats.rows() < 2) {
    throw DegenerateBatch(fmt::format("infonce needs L >= 2, got {}", text_feats.rows()));
  }
  return infonce_from_similarity(matmul_nt(text_feats, l2_normalize_rows(image_feats)), tau);
}

double mean_pairwise_cosine(const Matrix& feats, std::span<const std::size_t> rows) {
  if (rows.size() < 2) return 0.0;
  double acc = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      acc += cosine_sim(feats.row(rows[i]), feats.row(rows[j]));
      ++pairs;
    }
  }
  return acc / static_cast<double>(pairs);
}

namespace ad {

Var filter_features(Tape& tape, const FrozenEncoders& enc, Var prompt, const Matrix& base_tokens,
                    const SelectionMatrix& selection) {
  if (base_tokens.rows() != selection.n_base) {
    throw DimensionMismatch("filter_features: selection width differs from base class count");
  }
  return gather_rows(l2_normalize_rows(encode_texts(tape, enc, prompt, base_tokens)),
                     selection.cols);
}

Var infonce_loss(Var text_feats, Var image_feats, double tau) {
  if (text_feats.value().rows() != image_feats.value().rows() ||
      text_feats.value().cols() != image_feats.value().cols()) {
    throw DimensionMismatch("infonce: text and image features must pair row by row");
  }
  const std::size_t n = text_feats.rows();
  if (n < 2) throw DegenerateBatch(fmt::format("infonce needs L >= 2, got {}", n));
  if (!(tau > 0.0)) throw NonPositiveTemperature(fmt::format("tau must be > 0, got {}", tau));
  std::vector<std::size_t> diag(n);
  std::iota(diag.begin(), diag.end(), 0);
  Var sim = scale(matmul_nt(text_feats, l2_normalize_rows(image_feats)), 1.0 / tau);
  return add(nll_mean(log_softmax_rows(sim), diag),
             nll_mean(log_softmax_rows(transpose(sim)), diag));
}

}  // namespace ad

namespace {

void check_dpc_config(const DpcConfig& c, std::size_t n_base) {
  validate_train_config(c.train, "dpc");
  validate_batch_config(n_base, c.train.batch_size, c.top_k);
  if (!(c.omega_base >= 0.0 && c.omega_base <= 1.0) ||
      !(c.omega_new >= 0.0 && c.omega_new <= 1.0)) {
    throw OmegaOutOfRange(
        fmt::format("omega_base {} / omega_new {} outside [0, 1]", c.omega_base, c.omega_new));
  }
}

// P' as seen by the loss: through mix and its inverse when omega_base > 0.
ad::Var route(ad::Tape& tape, const Matrix& parallel, const Matrix& tuned, double omega,
              ad::Var& param) {
  param = tape.parameter(parallel);
  if (omega <= 0.0) return param;
  return ad::unmix(ad::mix(param, tuned, omega), tuned, omega);
}

struct TapedDpcLoss {
  ad::Var loss;
  ad::Var text;
  ad::Var visual;
};

TapedDpcLoss taped_dpc_loss(ad::Tape& tape, const FrozenEncoders& enc, const SyntheticDataset& ds,
                            const Matrix& base_tokens, const DualPromptState& dual,
                            const HardNegativeBatch& batch, const DpcConfig& config) {
  TapedDpcLoss out;
  const double omega = config.omega_base;
  const double tau = config.train.tau;
  const ad::Var text_prompt = route(tape, dual.parallel.text, dual.tuned.text, omega, out.text);
  const SelectionMatrix q = SelectionMatrix::from_batch(ds, batch);
  const ad::Var text = ad::filter_features(tape, enc, text_prompt, base_tokens, q);
  const Matrix sums = patch_sums(ds.train, batch.images);
  ad::Var images;
  if (dual.parallel.visual) {
    const ad::Var vp = route(tape, *dual.parallel.visual, *dual.tuned.visual, omega, out.visual);
    images = ad::encode_images(tape, enc, vp, sums, ds.config.n_patches);
  } else {
    images = tape.constant(encode_images(enc, nullptr, sums, ds.config.n_patches));
  }
  if (config.loss == DpcLoss::infonce) {
    out.loss = ad::infonce_loss(text, images, tau);
  } else {
    // Image-to-text cross-entropy restricted to the hard-negative candidates.
    std::vector<std::size_t> diag(batch.size());
    std::iota(diag.begin(), diag.end(), 0);
    const ad::Var logits =
        ad::scale(ad::matmul_nt(ad::l2_normalize_rows(images), text), 1.0 / tau);
    out.loss = ad::nll_mean(ad::log_softmax_rows(logits), diag);
  }
  return out;
}

}  // namespace

double dpc_batch_loss(const FrozenEncoders& enc, const SyntheticDataset& ds,
                      const DualPromptState& dual, const HardNegativeBatch& batch,
                      const DpcConfig& config) {
  ad::Tape tape;
  return taped_dpc_loss(tape, enc, ds, ds.split_tokens(Split::base), dual, batch, config)
      .loss.value()(0, 0);
}

LossAndGrad dpc_batch_loss_and_grad(const FrozenEncoders& enc, const SyntheticDataset& ds,
                                    const DualPromptState& dual, const HardNegativeBatch& batch,
                                    const DpcConfig& config) {
  ad::Tape tape;
  const TapedDpcLoss t =
      taped_dpc_loss(tape, enc, ds, ds.split_tokens(Split::base), dual, batch, config);
  tape.backward(t.loss);
  LossAndGrad out{t.loss.value()(0, 0), t.text.grad(), {}};
  if (t.visual.valid()) out.visual_grad = t.visual.grad();
  return out;
}

DpcResult train_dpc(const SyntheticDataset& ds, const FrozenEncoders& enc, const PromptState& tuned,
                    const DpcConfig& config) {
  check_dpc_config(config, ds.n_base());
  const TrainConfig& tc = config.train;
  DpcResult result;
  result.dual = make_dual(tuned, config.omega_base, config.omega_new);
  const PromptState frozen = result.dual.tuned;

  const Matrix base_tokens = ds.split_tokens(Split::base);
  const Matrix tuned_text = encode_texts(enc, frozen.text, base_tokens);
  const Matrix tuned_unit = l2_normalize_rows(tuned_text);
  const FewShotSplit split = few_shot_split(ds);
  std::vector<std::size_t> order(split.images.size());
  std::iota(order.begin(), order.end(), 0);

  Rng shuffle_rng(tc.seed, "dpc/shuffle");
  Rng negative_rng(tc.seed, "dpc/negatives");
  Rng audit_rng(tc.seed, "dpc/audit");
  SgdMomentum text_opt(tc.lr, tc.momentum);
  SgdMomentum visual_opt(tc.lr, tc.momentum);
  std::vector<std::size_t> all_base(ds.n_base());
  std::iota(all_base.begin(), all_base.end(), 0);

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      std::vector<std::size_t> images, labels;
      for (std::size_t i = start; i < end; ++i) {
        images.push_back(split.images[order[i]]);
        labels.push_back(split.labels[order[i]]);
      }
      const Matrix gt_feats = encode_images(enc, frozen.visual_or_null(),
                                            patch_sums(ds.train, images), ds.config.n_patches);
      const HardNegativeBatch batch = sample_hard_negatives(
          ds, tuned_text, gt_feats, images, labels, config.top_k, tc.tau, negative_rng);

      ad::Tape tape;
      const TapedDpcLoss t =
          taped_dpc_loss(tape, enc, ds, base_tokens, result.dual, batch, config);
      const double loss = t.loss.value()(0, 0);
      if (!std::isfinite(loss)) throw DivergedLoss("dpc", epoch + 1, result.steps, loss);
      tape.backward(t.loss);
      text_opt.step(result.dual.parallel.text, t.text.grad());
      if (t.visual.valid()) visual_opt.step(*result.dual.parallel.visual, t.visual.grad());

      SamplerAuditRow audit{epoch, result.steps, batch.size(), 0.0, 0.0};
      const SelectionMatrix q = SelectionMatrix::from_batch(ds, batch);
      audit.hard_similarity = mean_pairwise_cosine(tuned_unit, q.cols);
      // Partial Fisher-Yates: the first L entries form a uniform random subset.
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const std::size_t j = i + static_cast<std::size_t>(audit_rng.uniform_below(all_base.size() - i));
        std::swap(all_base[i], all_base[j]);
      }
      audit.random_similarity = mean_pairwise_cosine(
          tuned_unit, std::span<const std::size_t>(all_base.data(), batch.size()));
      result.audit.push_back(audit);

      epoch_loss += loss;
      ++batches;
      ++result.steps;
    }
    result.loss_curve.push_back(epoch_loss / static_cast<double>(batches));
  }
  if (!(result.dual.tuned == frozen)) throw Error("dpc: tuned prompt changed during training");
  return result;
}

}  // namespace dpc
