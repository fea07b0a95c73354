#include <benchmark/benchmark.h>

#include <random>

#include "segloc/infer_eval.hpp"
#include "segloc/losses.hpp"
#include "segloc/synthgen.hpp"
#include "segloc/trainer.hpp"

using namespace segloc;

namespace {

Video bench_video(std::size_t length, std::size_t dim, std::size_t classes) {
  std::mt19937_64 rng(length * 31 + dim);
  std::normal_distribution<double> normal;
  Video v;
  v.features.video_id = "bench";
  v.features.x = Tensor2(length, dim);
  for (double& x : v.features.x.data()) x = normal(rng);
  v.labels.y.assign(classes, 0);
  v.labels.y[0] = 1;
  v.labels.segments = {{length / 2, 0}};
  return v;
}

void BM_Forward(benchmark::State& state) {
  const auto l = static_cast<std::size_t>(state.range(0));
  const Video v = bench_video(l, 32, 4);
  const Parameters p = init_params(32, 4, 1);
  for (auto _ : state) benchmark::DoNotOptimize(infer(p, v.features.x));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(l));
}
BENCHMARK(BM_Forward)->Arg(40)->Arg(80)->Arg(320);

void BM_ForwardBackward(benchmark::State& state) {
  const auto l = static_cast<std::size_t>(state.range(0));
  const Video v = bench_video(l, 32, 4);
  const Parameters p = init_params(32, 4, 1);
  const LossWeights w;
  for (auto _ : state) benchmark::DoNotOptimize(video_gradient(p, v, w, nullptr));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(l));
}
BENCHMARK(BM_ForwardBackward)->Arg(40)->Arg(80)->Arg(320);

void BM_PropagationLoss(benchmark::State& state) {
  const auto l = static_cast<std::size_t>(state.range(0));
  const Video v = bench_video(l, 32, 4);
  const Tensor2 S = similarity_matrix(v.features.x, SimilarityMode::kNormalizedClamped);
  const Tensor2 loc = infer(init_params(32, 4, 2), v.features.x).loc;
  for (auto _ : state) {
    ad::Graph g;
    const ad::Var x = g.parameter(loc);
    g.backward(propagation_loss(x, S));
    benchmark::DoNotOptimize(x.grad());
  }
}
BENCHMARK(BM_PropagationLoss)->Arg(80)->Arg(320);

void BM_TrainSteps(benchmark::State& state) {
  SynthConfig sc;
  sc.num_videos = 16;
  sc.num_test_videos = 0;
  const SynthCorpus corpus = generate(sc);
  TrainConfig tc;
  tc.max_steps = 10;
  for (auto _ : state) benchmark::DoNotOptimize(train(corpus.train, init_params(32, 4, 3), tc));
  state.SetItemsProcessed(state.iterations() * 10);
}
BENCHMARK(BM_TrainSteps)->Unit(benchmark::kMillisecond);

void BM_DetectionMap(benchmark::State& state) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> start(0, 200);
  std::uniform_int_distribution<std::size_t> span(2, 30);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  std::vector<VideoDetections> videos(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < videos.size(); ++i) {
    videos[i].video_id = "v" + std::to_string(i);
    for (int k = 0; k < 3; ++k) {
      const std::size_t s = start(rng);
      videos[i].ground_truth.push_back({static_cast<std::size_t>(k) % 4, s, s + span(rng)});
    }
    for (int k = 0; k < 20; ++k) {
      const std::size_t s = start(rng);
      videos[i].proposals.push_back({static_cast<std::size_t>(k) % 4, s, s + span(rng), score(rng)});
    }
  }
  const auto grid = default_iou_grid();
  for (auto _ : state) benchmark::DoNotOptimize(detection_map(videos, grid, 4));
}
BENCHMARK(BM_DetectionMap)->Arg(20)->Arg(200);

}  // namespace
BENCHMARK_MAIN();
