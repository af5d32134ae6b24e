#include "dpc/gradcheck.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "dpc/backbone.hpp"
#include "dpc/dhno.hpp"
#include "dpc/errors.hpp"
#include "dpc/numerics.hpp"
#include "dpc/rng.hpp"

namespace dpc {

bool GradCheckReport::passed() const {
  return std::all_of(ops.begin(), ops.end(), [](const OpCheck& o) { return o.passed; });
}

namespace {

// A small dataset keeps each probe cheap; dims follow the experiment config.
SyntheticDataset probe_dataset(const ExperimentConfig& config, std::uint64_t seed) {
  DatasetConfig d = config.dataset;
  d.n_classes = 10;
  d.shots = 2;
  d.test_per_class = 1;
  d.seed = seed;
  return generate(d);
}

std::vector<std::size_t> pick(const FewShotSplit& split, Rng& rng, std::size_t n,
                              std::vector<std::size_t>* labels) {
  std::vector<std::size_t> order(split.images.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::size_t> images;
  for (std::size_t i = 0; i < n && i < order.size(); ++i) {
    images.push_back(split.images[order[i]]);
    labels->push_back(split.labels[order[i]]);
  }
  return images;
}

}  // namespace

GradCheckReport gradcheck(const ExperimentConfig& config, std::size_t n_probes, double eps) {
  if (n_probes == 0) throw ConfigError("gradcheck needs at least one probe");
  OpCheck ce{"cross_entropy_loss", 0, 0.0, true};
  OpCheck nce{"infonce_loss", 0, 0.0, true};
  OpCheck text{"encode_text", 0, 0.0, true};
  OpCheck image{"encode_image", 0, 0.0, true};
  const double tau = config.backbone.tau;

  for (std::size_t k = 0; k < n_probes; ++k) {
    Rng rng(config.seed, fmt::format("gradcheck/{}", k));
    EncoderConfig ec = config.encoder;
    ec.seed = rng.next();
    const FrozenEncoders enc(ec);
    const SyntheticDataset ds = probe_dataset(config, rng.next());
    const FewShotSplit split = few_shot_split(ds);

    PromptState prompt;
    prompt.text = rng.gaussian_matrix(config.prompt.length, ec.d_e, 0.5);
    prompt.visual = rng.gaussian_matrix(config.prompt.visual_length, ec.d_e, 0.5);

    {
      std::vector<std::size_t> labels;
      const std::vector<std::size_t> images = pick(split, rng, 3, &labels);
      const LossAndGrad g = backbone_loss_and_grad(enc, ds, prompt, images, labels, tau);
      const Matrix num = extrapolated_diff_grad(
          [&](const Matrix& p) {
            PromptState q = prompt;
            q.text = p;
            return backbone_loss(enc, ds, q, images, labels, tau);
          },
          prompt.text, eps);
      ce.max_rel_error = std::max(ce.max_rel_error, max_relative_error(g.text_grad, num));
      ++ce.probes;
    }
    {
      std::vector<std::size_t> labels;
      const std::vector<std::size_t> images = pick(split, rng, 2, &labels);
      DualPromptState dual = make_dual(prompt, config.dpc.omega_base, config.dpc.omega_new);
      dual.parallel.text = dual.parallel.text + rng.gaussian_matrix(prompt.text.rows(), ec.d_e, 0.1);
      const HardNegativeBatch batch =
          sample_hard_negatives(ds, enc, prompt, images, labels, 2, tau, rng);
      DpcConfig dc = config.dpc;
      dc.loss = DpcLoss::infonce;
      dc.train.tau = tau;
      const LossAndGrad g = dpc_batch_loss_and_grad(enc, ds, dual, batch, dc);
      const Matrix num = extrapolated_diff_grad(
          [&](const Matrix& p) {
            DualPromptState q = dual;
            q.parallel.text = p;
            return dpc_batch_loss(enc, ds, q, batch, dc);
          },
          dual.parallel.text, eps);
      nce.max_rel_error = std::max(nce.max_rel_error, max_relative_error(g.text_grad, num));
      ++nce.probes;
    }
    {
      // Scalarise each encoder output with fixed random weights.
      const Matrix tokens = ds.split_tokens(Split::base);
      const Matrix weights = rng.gaussian_matrix(tokens.rows(), ec.d, 1.0);
      ad::Tape tape;
      ad::Var p = tape.parameter(prompt.text);
      tape.backward(ad::sum(ad::mul(ad::encode_texts(tape, enc, p, tokens), tape.constant(weights))));
      const Matrix num = extrapolated_diff_grad(
          [&](const Matrix& q) {
            const Matrix f = encode_texts(enc, q, tokens);
            double acc = 0.0;
            for (std::size_t i = 0; i < f.size(); ++i) acc += f.values()[i] * weights.values()[i];
            return acc;
          },
          prompt.text, eps);
      text.max_rel_error = std::max(text.max_rel_error, max_relative_error(p.grad(), num));
      ++text.probes;
    }
    {
      std::vector<std::size_t> all(ds.train.size());
      std::iota(all.begin(), all.end(), 0);
      const Matrix sums = patch_sums(ds.train, all);
      const Matrix weights = rng.gaussian_matrix(sums.rows(), ec.d, 1.0);
      ad::Tape tape;
      ad::Var v = tape.parameter(*prompt.visual);
      tape.backward(ad::sum(ad::mul(
          ad::encode_images(tape, enc, v, sums, ds.config.n_patches), tape.constant(weights))));
      const Matrix num = extrapolated_diff_grad(
          [&](const Matrix& q) {
            const Matrix f = encode_images(enc, &q, sums, ds.config.n_patches);
            double acc = 0.0;
            for (std::size_t i = 0; i < f.size(); ++i) acc += f.values()[i] * weights.values()[i];
            return acc;
          },
          *prompt.visual, eps);
      image.max_rel_error = std::max(image.max_rel_error, max_relative_error(v.grad(), num));
      ++image.probes;
    }
  }
  GradCheckReport report;
  for (OpCheck* op : {&ce, &nce, &text, &image}) {
    op->passed = op->max_rel_error < kGradCheckTolerance;
    report.ops.push_back(*op);
  }
  return report;
}

void require_passed(const GradCheckReport& report) {
  std::string failed;
  for (const OpCheck& op : report.ops) {
    if (!op.passed) failed += fmt::format(" {} (max rel err {:.3e})", op.op, op.max_rel_error);
  }
  if (!failed.empty()) throw GradCheckFailed("gradient check failed:" + failed);
}

}  // namespace dpc
