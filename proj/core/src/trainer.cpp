#include "segloc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "segloc/errors.hpp"
#include "segloc/seeds.hpp"

namespace segloc {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw std::invalid_argument("dropout_rate must be in [0, 1)");
  if (num_threads < 1) throw std::invalid_argument("num_threads must be >= 1");
  loss_weights.validate();
}

std::string to_json_line(const StepRecord& r) {
  nlohmann::json j = {{"step", r.step},   {"total", r.total},   {"cls", r.cls},
                      {"segment", r.segment}, {"sphere", r.sphere}, {"prop", r.prop},
                      {"grad_norm", r.grad_norm}};
  return j.dump();
}

Gradients zero_gradients(const Parameters& params) {
  Gradients g;
  const auto ts = params.tensors();
  for (std::size_t i = 0; i < Parameters::kCount; ++i) g[i] = Tensor2(ts[i]->rows(), ts[i]->cols());
  return g;
}

AdamState AdamState::for_params(const Parameters& params) {
  return {zero_gradients(params), zero_gradients(params), 0};
}

void accumulate_and_step(Parameters& params, const Gradients& grads, AdamState& state, double lr) {
  auto ts = params.tensors();
  for (std::size_t i = 0; i < Parameters::kCount; ++i) {
    if (!grads[i].same_shape(*ts[i])) throw ShapeError("accumulate_and_step: gradient shape mismatch");
    if (!grads[i].all_finite()) {
      throw NumericError("accumulate_and_step: non-finite gradient for " + std::string(Parameters::kNames[i]));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(AdamState::kBeta1, t);
  const double bc2 = 1.0 - std::pow(AdamState::kBeta2, t);
  for (std::size_t i = 0; i < Parameters::kCount; ++i) {
    Tensor2& p = *ts[i];
    Tensor2& m = state.first_moment[i];
    Tensor2& v = state.second_moment[i];
    const Tensor2& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = AdamState::kBeta1 * m[k] + (1.0 - AdamState::kBeta1) * g[k];
      v[k] = AdamState::kBeta2 * v[k] + (1.0 - AdamState::kBeta2) * g[k] * g[k];
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p[k] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::kEpsilon);
    }
  }
}

VideoGradient video_gradient(const Parameters& params, const Video& video, const LossWeights& weights,
                             const Tensor2* dropout) {
  ad::Graph graph;
  const ParamVars vars = ParamVars::bind(graph, params);
  const CasPair cas = forward(graph, vars, video.features.x, dropout);
  VideoGradient out;
  out.terms = total_loss(cas, video.labels, weights, vars.sphere_weight);
  out.total = out.terms.total.value().item();
  if (!std::isfinite(out.total)) return out;
  graph.backward(out.terms.total);
  const auto vs = vars.vars();
  for (std::size_t i = 0; i < Parameters::kCount; ++i) out.grads[i] = vs[i].grad();
  return out;
}

namespace {

class BatchSampler {
public:
  BatchSampler(std::size_t corpus_size, std::uint64_t seed) : order_(corpus_size), rng_(seed) { reshuffle(); }

  std::vector<std::size_t> next(std::size_t batch_size) {
    std::vector<std::size_t> batch;
    batch.reserve(batch_size);
    while (batch.size() < batch_size) {
      if (cursor_ == order_.size()) reshuffle();
      batch.push_back(order_[cursor_++]);
    }
    return batch;
  }

private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }

  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t cursor_ = 0;
};

}  // namespace

TrainResult train(const Corpus& corpus, Parameters params, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  TrainResult result;
  if (config.max_steps == 0) {
    result.params = std::move(params);
    return result;
  }
  if (corpus.empty()) throw std::invalid_argument("train: corpus is empty");
  for (const Video& v : corpus) {
    if (std::none_of(v.labels.y.begin(), v.labels.y.end(), [](auto b) { return b != 0; })) {
      throw DataError("train: video '" + v.features.video_id + "' has no class label");
    }
    if (v.features.dim() != params.feature_dim() || v.labels.y.size() != params.num_classes()) {
      throw ShapeError("train: video '" + v.features.video_id + "' does not match the parameter shapes");
    }
  }

  BatchSampler sampler(corpus.size(), derive_seed(config.seed, "batching"));
  const std::uint64_t dropout_root = derive_seed(config.seed, "dropout");
  AdamState adam = AdamState::for_params(params);
  const double dropout = config.dropout_rate;

  for (std::size_t step = 0; step < config.max_steps; ++step) {
    const std::vector<std::size_t> batch = sampler.next(config.batch_size);
    std::vector<VideoGradient> per_video(batch.size());

    const auto work = [&](std::size_t slot) {
      const Video& v = corpus[batch[slot]];
      Tensor2 mask;
      if (dropout > 0.0) {
        Rng rng(derive_seed(derive_seed(dropout_root, step), slot));
        mask = dropout_mask(v.features.length(), params.feature_dim(), dropout, rng);
      }
      per_video[slot] = video_gradient(params, v, config.loss_weights, dropout > 0.0 ? &mask : nullptr);
    };
    if (config.num_threads == 1 || batch.size() == 1) {
      for (std::size_t s = 0; s < batch.size(); ++s) work(s);
    } else {
      const std::size_t workers = std::min(config.num_threads, batch.size());
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t s = w; s < batch.size(); s += workers) work(s);
        });
      }
      for (auto& th : pool) th.join();
    }

    // Reduction point: fixed batch order.
    Gradients grads = zero_gradients(params);
    StepRecord rec;
    rec.step = step;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const VideoGradient& vg = per_video[s];
      if (!std::isfinite(vg.total)) {
        throw TrainingError("non-finite loss on video '" + corpus[batch[s]].features.video_id + "' at step " +
                                std::to_string(step),
                            corpus[batch[s]].features.video_id, step);
      }
      for (std::size_t i = 0; i < Parameters::kCount; ++i) grads[i] += vg.grads[i];
      rec.total += vg.total * inv;
      rec.cls += vg.terms.cls * inv;
      rec.segment += vg.terms.segment * inv;
      rec.sphere += vg.terms.sphere * inv;
      rec.prop += vg.terms.prop * inv;
    }
    double sq = 0.0;
    for (Tensor2& g : grads) {
      g *= inv;
      for (double v : g.data()) sq += v * v;
    }
    rec.grad_norm = std::sqrt(sq);

    accumulate_and_step(params, grads, adam, config.learning_rate);
    result.history.steps.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    const std::size_t done = step + 1;
    if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && hooks.on_checkpoint) {
      hooks.on_checkpoint(done, params);
    }
    if (config.eval_every > 0 && done % config.eval_every == 0 && hooks.on_eval) hooks.on_eval(done, params);
  }
  result.params = std::move(params);
  return result;
}

}  // namespace segloc
