#include <benchmark/benchmark.h>

#include "smmix/mixer.hpp"
#include "smmix/ops.hpp"
#include "smmix/vit.hpp"

extern "C" void openblas_set_num_threads(int);

namespace {

using namespace smmix;

void bm_matmul(benchmark::State& state) {
  openblas_set_num_threads(1);
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  auto a = Tensor<float>::uniform({n, n}, rng, -1.0f, 1.0f);
  auto b = Tensor<float>::uniform({n, n}, rng, -1.0f, 1.0f);
  Tape<float> tape;
  tape.grad_enabled = false;
  for (auto _ : state) {
    auto c = ops::matmul(tape, a, b);
    benchmark::DoNotOptimize(c.value().data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

void bm_window_sums(benchmark::State& state) {
  const int g = static_cast<int>(state.range(0));
  Rng rng(2);
  AttentionScoreGrid<float> alpha;
  alpha.rows = alpha.cols = g;
  alpha.alpha.resize(static_cast<std::size_t>(g) * g);
  for (auto& v : alpha.alpha) v = static_cast<float>(rng.next_double());
  const int h = g / 2, w = g / 2;
  for (auto _ : state) {
    auto sums = window_sums(alpha, h, w);
    benchmark::DoNotOptimize(sums.data());
  }
}

void bm_region_selection(benchmark::State& state) {
  const int g = static_cast<int>(state.range(0));
  Rng rng(3);
  AttentionScoreGrid<float> src, tgt;
  src.rows = src.cols = tgt.rows = tgt.cols = g;
  src.alpha.resize(static_cast<std::size_t>(g) * g);
  tgt.alpha.resize(static_cast<std::size_t>(g) * g);
  for (auto& v : src.alpha) v = static_cast<float>(rng.next_double());
  for (auto& v : tgt.alpha) v = static_cast<float>(rng.next_double());
  for (auto _ : state) {
    auto centers = select_regions(src, tgt, g / 2, g / 2);
    benchmark::DoNotOptimize(centers);
  }
}

void bm_forward(benchmark::State& state) {
  openblas_set_num_threads(1);
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 4;
  cfg.channels = 3;
  cfg.embed_dim = 64;
  cfg.num_heads = 4;
  cfg.depth = static_cast<int>(state.range(0));
  cfg.num_classes = 4;
  VitModel<float> model(cfg, Rng(4));
  Rng rng(5);
  std::vector<Tensor<float>> images;
  for (int i = 0; i < 8; ++i)
    images.push_back(Tensor<float>::uniform({cfg.channels, cfg.image_size, cfg.image_size}, rng,
                                            0.0f, 1.0f));
  ForwardOptions<float> opt;
  opt.record_attention = false;
  for (auto _ : state) {
    Tape<float> tape;
    tape.grad_enabled = false;
    auto out = forward(tape, model, images, opt);
    benchmark::DoNotOptimize(out.logits.value().data());
  }
}

Tensor<float> one_hot_rows(const std::vector<int>& labels, int C) {
  Tensor<float> t({static_cast<int>(labels.size()), C});
  for (std::size_t i = 0; i < labels.size(); ++i) t.at(static_cast<int>(i), labels[i]) = 1.0f;
  return t;
}

void bm_train_step_graph(benchmark::State& state) {
  // Forward + backward through the classification loss (mix-free), the
  // dominant per-step cost.
  openblas_set_num_threads(1);
  ModelConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 4;
  cfg.channels = 3;
  cfg.embed_dim = 64;
  cfg.num_heads = 4;
  cfg.depth = static_cast<int>(state.range(0));
  cfg.num_classes = 4;
  VitModel<float> model(cfg, Rng(6));
  Rng rng(7);
  std::vector<Tensor<float>> images;
  std::vector<int> labels;
  for (int i = 0; i < 8; ++i) {
    images.push_back(Tensor<float>::uniform({cfg.channels, cfg.image_size, cfg.image_size}, rng,
                                            0.0f, 1.0f));
    labels.push_back(i % cfg.num_classes);
  }
  auto targets = one_hot_rows(labels, cfg.num_classes);
  ForwardOptions<float> opt;
  opt.record_attention = false;
  for (auto _ : state) {
    Tape<float> tape;
    auto out = forward(tape, model, images, opt);
    auto loss = ops::cross_entropy_soft(tape, out.logits, targets);
    model.zero_grads();
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.value().data());
  }
}

}  // namespace

BENCHMARK(bm_matmul)->Arg(64)->Arg(256);
BENCHMARK(bm_window_sums)->Arg(8)->Arg(64);
BENCHMARK(bm_region_selection)->Arg(8)->Arg(64);
BENCHMARK(bm_forward)->Arg(1)->Arg(4);
BENCHMARK(bm_train_step_graph)->Arg(1)->Arg(4);

BENCHMARK_MAIN();
