#include <benchmark/benchmark.h>

#include "dpc/backbone.hpp"
#include "dpc/config.hpp"
#include "dpc/dhno.hpp"
#include "dpc/encoders.hpp"

namespace dpc {
namespace {

struct Setup {
  ExperimentConfig cfg = default_config(0);
  SyntheticDataset ds = generate(cfg.dataset);
  FrozenEncoders enc{cfg.encoder};
  PromptState prompt = initial_prompt(ds, cfg.prompt, 1);
  FewShotSplit split = few_shot_split(ds);
};

const Setup& setup() {
  static const Setup s;
  return s;
}

void BM_EncodeBaseTexts(benchmark::State& state) {
  const Setup& s = setup();
  const Matrix tokens = s.ds.split_tokens(Split::base);
  for (auto _ : state) benchmark::DoNotOptimize(encode_texts(s.enc, s.prompt.text, tokens));
}
BENCHMARK(BM_EncodeBaseTexts);

void BM_BackboneLossAndGrad(benchmark::State& state) {
  const Setup& s = setup();
  const std::vector<std::size_t> imgs(s.split.images.begin(), s.split.images.begin() + 32);
  const std::vector<std::size_t> labels(s.split.labels.begin(), s.split.labels.begin() + 32);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        backbone_loss_and_grad(s.enc, s.ds, s.prompt, imgs, labels, s.cfg.backbone.tau));
}
BENCHMARK(BM_BackboneLossAndGrad);

void BM_HardNegativeSampler(benchmark::State& state) {
  const Setup& s = setup();
  const std::vector<std::size_t> imgs(s.split.images.begin(), s.split.images.begin() + 4);
  const std::vector<std::size_t> labels(s.split.labels.begin(), s.split.labels.begin() + 4);
  Rng rng(7);
  for (auto _ : state)
    benchmark::DoNotOptimize(sample_hard_negatives(s.ds, s.enc, s.prompt, imgs, labels,
                                                   s.cfg.dpc.top_k, s.cfg.backbone.tau, rng));
}
BENCHMARK(BM_HardNegativeSampler);

}  // namespace
}  // namespace dpc

BENCHMARK_MAIN();
