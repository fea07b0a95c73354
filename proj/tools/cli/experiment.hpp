#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "segloc/datamodel.hpp"
#include "segloc/infer_eval.hpp"
#include "segloc/losses.hpp"
#include "segloc/trainer.hpp"

namespace segloc::cli {

/// A loss combination of the ablation grid. CL is always on.
struct LossCombo {
  bool psl = false;  ///< partial segment loss (alpha)
  bool sl = false;   ///< sphere loss (beta)
  bool pl = false;   ///< propagation loss (gamma)

  std::string name() const;
  /// Zeroes the weights of disabled terms.
  LossWeights apply(LossWeights weights) const;
  friend bool operator==(const LossCombo&, const LossCombo&) = default;
};

/// Accepts "CL", "CL+PSL", ..., "CL+PSL+SL+PL" and the alias "ALL".
LossCombo parse_combo(std::string_view text);
std::vector<LossCombo> parse_combos(std::string_view comma_list);
/// CL, CL+PSL, CL+SL, CL+PL, CL+PSL+SL, CL+PSL+PL, CL+SL+PL, ALL.
std::vector<LossCombo> full_grid();

/// Sub-seeds of one run, all derived from a root seed.
struct RunSeeds {
  std::uint64_t labels = 0;
  std::uint64_t init = 0;
  std::uint64_t train = 0;
  static RunSeeds from_root(std::uint64_t root);
};

struct RunOutcome {
  EvalReport report;
  TrainResult trained;
};

/// Relabels `train_split` for `mode`, trains from a fresh init, evaluates on
/// `test_split`. Everything random comes from `root_seed`, so runs that share
/// a seed differ only in `config.loss_weights`.
RunOutcome train_and_evaluate(Corpus train_split, const Corpus& test_split, std::size_t num_classes,
                              SupervisionMode mode, std::uint64_t root_seed, const TrainConfig& config,
                              const EvalOptions& eval);

struct GradCheckRow {
  std::string loss;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  double seconds = 0.0;
};

/// Finite-difference check of each loss and the total on random small
/// problems (l in [6, 12], D = 5, N = 3, no dropout).
std::vector<GradCheckRow> gradcheck_suite(std::uint64_t seed, std::size_t instances, double epsilon = 1e-6);

}  // namespace segloc::cli
