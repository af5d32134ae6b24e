#include "dpc/eval.hpp"

#include <fstream>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/os.h>

#include "dpc/errors.hpp"
#include "dpc/numerics.hpp"

namespace dpc {

std::vector<std::size_t> classify_with(const FrozenEncoders& enc, const SyntheticDataset& ds,
                                       const PromptState& prompt, Split split, double tau) {
  const std::vector<std::size_t>& ids = ds.ids(split);
  const std::vector<std::size_t> test = ds.test_indices(split);
  if (ids.empty() || test.empty()) {
    throw EmptySplit(fmt::format("{} split has no classes or test images", split_name(split)));
  }
  const Matrix text = encode_texts(enc, prompt.text, ds.split_tokens(split));
  const Matrix images =
      encode_images(enc, prompt.visual_or_null(), patch_sums(ds.test, test), ds.config.n_patches);
  const Matrix logits = similarity_logits(images, text, tau);
  std::vector<std::size_t> out(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    // First maximum wins, so ties go to the lower class id.
    std::size_t best = 0;
    for (std::size_t c = 1; c < ids.size(); ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    out[i] = ids[best];
  }
  return out;
}

std::vector<std::size_t> classify(const DualPromptState& dual, const FrozenEncoders& enc,
                                  const SyntheticDataset& ds, Split split, double tau) {
  const PromptState prompt =
      split == Split::base ? weight_mix(dual, dual.omega_base) : new_class_prompt(dual);
  return classify_with(enc, ds, prompt, split, tau);
}

double split_accuracy(const SyntheticDataset& ds, Split split,
                      const std::vector<std::size_t>& predictions,
                      std::vector<ClassScore>* per_class) {
  const std::vector<std::size_t> test = ds.test_indices(split);
  if (predictions.size() != test.size()) {
    throw DimensionMismatch(fmt::format("{} predictions for {} test images", predictions.size(),
                                        test.size()));
  }
  if (test.empty()) throw EmptySplit(fmt::format("{} split is empty", split_name(split)));
  const std::vector<std::size_t>& ids = ds.ids(split);
  std::vector<ClassScore> scores(ids.size());
  for (std::size_t c = 0; c < ids.size(); ++c) {
    scores[c].class_id = ids[c];
    scores[c].split = split;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const std::size_t label = ds.test[test[i]].label;
    ClassScore& s = scores[ds.local_index(label)];
    ++s.total;
    if (predictions[i] == label) {
      ++s.correct;
      ++correct;
    }
  }
  for (ClassScore& s : scores)
    s.accuracy = s.total == 0 ? 0.0 : 100.0 * static_cast<double>(s.correct) /
                                          static_cast<double>(s.total);
  if (per_class != nullptr) per_class->insert(per_class->end(), scores.begin(), scores.end());
  return 100.0 * static_cast<double>(correct) / static_cast<double>(test.size());
}

double harmonic_mean(double base_acc, double new_acc) {
  if (!(base_acc >= 0.0 && base_acc <= 100.0 && new_acc >= 0.0 && new_acc <= 100.0)) {
    throw std::invalid_argument(
        fmt::format("harmonic_mean: accuracies {} / {} outside [0, 100]", base_acc, new_acc));
  }
  if (base_acc == 0.0 && new_acc == 0.0) throw BothZero("harmonic_mean: both accuracies are 0");
  return 2.0 * base_acc * new_acc / (base_acc + new_acc);
}

namespace {

double safe_hm(double b, double n) { return (b == 0.0 && n == 0.0) ? 0.0 : harmonic_mean(b, n); }

}  // namespace

EvalReport evaluate_prompts(const FrozenEncoders& enc, const SyntheticDataset& ds,
                            const PromptState& base_prompt, const PromptState& new_prompt,
                            double tau) {
  EvalReport r;
  r.base_acc = split_accuracy(ds, Split::base,
                              classify_with(enc, ds, base_prompt, Split::base, tau), &r.per_class);
  r.new_acc = split_accuracy(ds, Split::new_classes,
                             classify_with(enc, ds, new_prompt, Split::new_classes, tau),
                             &r.per_class);
  r.hm = safe_hm(r.base_acc, r.new_acc);
  return r;
}

EvalReport evaluate(const DualPromptState& dual, const FrozenEncoders& enc,
                    const SyntheticDataset& ds, double tau) {
  return evaluate_prompts(enc, ds, weight_mix(dual, dual.omega_base), new_class_prompt(dual), tau);
}

SweepResult sweep_omega(const DualPromptState& dual, const FrozenEncoders& enc,
                        const SyntheticDataset& ds, const std::vector<double>& omegas, Split split,
                        double tau) {
  SweepResult out;
  out.split = split;
  out.param = split == Split::base ? "omega_base" : "omega_new";
  const Split other = split == Split::base ? Split::new_classes : Split::base;
  const double fixed_acc = split_accuracy(ds, other, classify(dual, enc, ds, other, tau));
  for (double omega : omegas) {
    const double applied = split == Split::base ? omega : effective_omega_new(omega);
    const double acc =
        split_accuracy(ds, split, classify_with(enc, ds, weight_mix(dual, applied), split, tau));
    SweepRow row;
    row.value = omega;
    row.base_acc = split == Split::base ? acc : fixed_acc;
    row.new_acc = split == Split::base ? fixed_acc : acc;
    row.hm = safe_hm(row.base_acc, row.new_acc);
    out.rows.push_back(row);
  }
  for (std::size_t i = 1; i < out.rows.size(); ++i) {
    const double prev = split == Split::base ? out.rows[i - 1].base_acc : out.rows[i - 1].new_acc;
    const double cur = split == Split::base ? out.rows[i].base_acc : out.rows[i].new_acc;
    if (cur <= prev) ++out.non_increasing_steps;
  }
  out.monotone_non_increasing =
      out.rows.size() < 2 || out.non_increasing_steps == out.rows.size() - 1;
  return out;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepResult>& sweeps,
                     std::uint64_t seed) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto out = fmt::output_file(path.string());
  out.print("param,value,base_acc,new_acc,hm,seed\n");
  for (const SweepResult& s : sweeps)
    for (const SweepRow& r : s.rows)
      out.print("{},{},{:.2f},{:.2f},{:.2f},{}\n", s.param, r.value, r.base_acc, r.new_acc, r.hm,
                seed);
}

FeatureMapReport feature_map_report(const Matrix& tuned, const Matrix& parallel,
                                    const Matrix& random_init) {
  if (!tuned.same_shape(parallel) || !tuned.same_shape(random_init)) {
    throw DimensionMismatch("feature_map_report: prompt shapes differ");
  }
  FeatureMapReport r;
  for (std::size_t i = 0; i < tuned.rows(); ++i) {
    r.tuned_vs_parallel.push_back(cosine_sim(tuned.row(i), parallel.row(i)));
    r.tuned_vs_random.push_back(cosine_sim(tuned.row(i), random_init.row(i)));
  }
  const double n = static_cast<double>(tuned.rows());
  for (std::size_t i = 0; i < tuned.rows(); ++i) {
    r.mean_tuned_vs_parallel += r.tuned_vs_parallel[i] / n;
    r.mean_tuned_vs_random += r.tuned_vs_random[i] / n;
  }
  return r;
}

void write_feature_map_csv(const std::filesystem::path& path, const FeatureMapReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto out = fmt::output_file(path.string());
  out.print("row,cos_tuned_parallel,cos_tuned_random\n");
  for (std::size_t i = 0; i < report.tuned_vs_parallel.size(); ++i)
    out.print("{},{:.17g},{:.17g}\n", i, report.tuned_vs_parallel[i], report.tuned_vs_random[i]);
  out.print("mean,{:.17g},{:.17g}\n", report.mean_tuned_vs_parallel, report.mean_tuned_vs_random);
}

std::vector<AblationRow> ablation_matrix(const SyntheticDataset& ds, const FrozenEncoders& enc,
                                         const AblationInputs& inputs) {
  const double tau = inputs.dpc.train.tau;
  const double wb = inputs.dpc.omega_base;
  const double wn = inputs.dpc.omega_new;
  std::vector<AblationRow> rows;
  const auto add = [&](std::string name, bool ts, bool dh, bool we, bool de, const EvalReport& r) {
    rows.push_back({std::move(name), ts, dh, we, de, r.base_acc, r.new_acc, r.hm});
  };

  const PromptState& p = inputs.tuned;
  add("(0)", false, false, false, false, evaluate_prompts(enc, ds, p, p, tau));

  TrainConfig cont = inputs.continuation;
  cont.epochs = inputs.dpc.train.epochs;
  const PromptState continued = train_backbone(ds, enc, p, cont, "continuation").tuned;
  add("(1)", true, false, false, false, evaluate_prompts(enc, ds, continued, continued, tau));

  const DualPromptState full = train_dpc(ds, enc, p, inputs.dpc).dual;
  add("(2)", true, true, false, false,
      evaluate_prompts(enc, ds, full.parallel, full.parallel, tau));
  const PromptState mixed = weight_mix(full, wb);
  add("(3)", true, true, true, false, evaluate_prompts(enc, ds, mixed, mixed, tau));

  DualPromptState ce_dual = make_dual(p, wb, wn);
  ce_dual.parallel = clone_parallel(continued);
  add("(4)", true, false, true, true, evaluate(ce_dual, enc, ds, tau));
  add("(5)", true, true, true, true, evaluate(full, enc, ds, tau));

  DpcConfig ce = inputs.dpc;
  ce.loss = DpcLoss::cross_entropy;
  add("(5-ce)", true, true, true, true, evaluate(train_dpc(ds, enc, p, ce).dual, enc, ds, tau));
  return rows;
}

}  // namespace dpc
