#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "segloc/datamodel.hpp"
#include "segloc/losses.hpp"
#include "segloc/model.hpp"

namespace segloc {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 8;
  std::size_t max_steps = 3000;
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  double dropout_rate = kDefaultDropoutRate;
  std::size_t checkpoint_every = 0;  ///< 0 disables periodic checkpoints
  std::size_t eval_every = 0;        ///< 0 disables periodic evaluation
  /// Worker threads for per-video forward/backward. Gradients are reduced in
  /// fixed video order, but only num_threads == 1 carries the bit-identical
  /// determinism guarantee.
  std::size_t num_threads = 1;

  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;
  double total = 0.0;
  double cls = 0.0;
  double segment = 0.0;
  double sphere = 0.0;
  double prop = 0.0;
  double grad_norm = 0.0;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

/// One JSON object per line.
std::string to_json_line(const StepRecord& record);

using Gradients = std::array<Tensor2, Parameters::kCount>;

Gradients zero_gradients(const Parameters& params);

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  Gradients first_moment;
  Gradients second_moment;
  std::size_t step = 0;

  static AdamState for_params(const Parameters& params);
};

/// One bias-corrected adaptive-moment update. Throws NumericError on a
/// non-finite gradient before touching anything.
void accumulate_and_step(Parameters& params, const Gradients& grads, AdamState& state, double learning_rate);

/// Thrown when a loss becomes non-finite; carries where it happened.
class TrainingError : public std::runtime_error {
public:
  TrainingError(const std::string& message, std::string video_id, std::size_t step)
      : std::runtime_error(message), video_id_(std::move(video_id)), step_(step) {}
  const std::string& video_id() const noexcept { return video_id_; }
  std::size_t step() const noexcept { return step_; }

private:
  std::string video_id_;
  std::size_t step_;
};

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(std::size_t step, const Parameters&)> on_checkpoint;
  std::function<void(std::size_t step, const Parameters&)> on_eval;
};

struct TrainResult {
  Parameters params;
  TrainHistory history;
};

/// Loss and parameter gradients for one video (no update).
struct VideoGradient {
  LossTerms terms;
  double total = 0.0;
  Gradients grads;
};
VideoGradient video_gradient(const Parameters& params, const Video& video, const LossWeights& weights,
                             const Tensor2* dropout);

/// Mini-batch training. Batches are drawn from a seeded per-epoch shuffle;
/// gradients are averaged over the batch before each update.
TrainResult train(const Corpus& corpus, Parameters params, const TrainConfig& config, const TrainHooks& hooks = {});

}  // namespace segloc
