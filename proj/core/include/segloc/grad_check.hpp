#pragma once

#include <functional>
#include <span>
#include <vector>

#include "segloc/autodiff.hpp"
#include "segloc/tensor.hpp"

namespace segloc::ad {

/// Builds a scalar loss from parameter vars bound into `graph`. Must be
/// deterministic: the harness calls it once for the analytic pass and twice
/// per parameter entry for the central differences.
using LossBuilder = std::function<Var(Graph& graph, std::span<const Var> params)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t entries = 0;
  double loss = 0.0;
};

/// Compares backward() against central finite differences on every entry of
/// every parameter. Relative error per entry is
/// |g_a − g_fd| / max(1, |g_a|, |g_fd|).
GradCheckReport grad_check(const LossBuilder& builder, std::span<const Tensor2> params,
                           double epsilon = 1e-6);

}  // namespace segloc::ad
