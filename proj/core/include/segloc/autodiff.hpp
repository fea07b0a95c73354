#pragma once

// Reverse-mode differentiation over Tensor2 values.
//
// A Graph is a tape: every op appends a node holding its forward value and a
// closure that scatters the node's gradient into its parents. Nodes are
// appended in evaluation order, so a reverse sweep is a valid topological
// order. Gradients accumulate with +=, which handles fan-out (one node
// consumed by several ops). Graphs are built fresh per example and thrown
// away after backward().

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "segloc/tensor.hpp"

namespace segloc::ad {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the Graph lives.
class Var {
public:
  Var() = default;

  const Tensor2& value() const;
  const Tensor2& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const noexcept { return graph_ != nullptr; }

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }

private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
public:
  /// Scatters `out_grad` (gradient of the node) into parent gradients.
  using BackwardFn = std::function<void(Graph&, const Tensor2& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf whose gradient is tracked.
  Var parameter(Tensor2 value);
  /// Leaf with no gradient.
  Var constant(Tensor2 value);

  /// Appends an op node. `parents` decides whether the node needs a gradient.
  Var record(Tensor2 value, std::initializer_list<Var> parents, BackwardFn backward);

  /// Seeds d(root)/d(root) = 1 and sweeps the tape backwards. Root must be 1×1.
  void backward(Var root);

  const Tensor2& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor2& grad(std::size_t id) const;
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient buffer of `v`, allocated on first touch. Only for use inside
  /// backward closures.
  Tensor2& grad_buffer(Var v);

  std::size_t size() const noexcept { return nodes_.size(); }

private:
  struct Node {
    Tensor2 value;
    Tensor2 grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
};

// ---- ops -------------------------------------------------------------------

/// x·W + b, with x l×D, W D×K, b 1×K.
Var linear(Var x, Var weight, Var bias);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var relu(Var x);
Var add(Var a, Var b);
Var scale(Var a, double factor);
/// Elementwise product with a constant (dropout masks, attention masks).
Var mul_constant(Var x, const Tensor2& mask);
/// Σ x ∘ w with constant weights; returns 1×1.
Var weighted_sum(Var x, const Tensor2& weights);
Var sum(Var x);

/// Softmax along each row (over columns).
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);
/// Softmax along each column (over rows, i.e. over time for an l×N CAS).
Var softmax_cols(Var x);
Var log_softmax_cols(Var x);

/// Per column, mean of the k largest entries. Returns 1×cols.
Var topk_mean_cols(Var x, std::size_t k);

/// Σ_n Σ_{i,j} S(i,j)·(x(i,n) − x(j,n))² with constant S (rows×rows). 1×1.
Var pairwise_smoothness(Var x, const Tensor2& similarity);

/// Σ (x − target)² with constant target. 1×1.
Var squared_error(Var x, const Tensor2& target);

/// Margin form used for the target-class logit of angular_margin_logits.
enum class PsiForm {
  kStandard,  ///< (−1)^k cos(mθ) − 2k: monotone decreasing on [0, π].
  kLiteral,   ///< (−1)^k cos(mθ) − 2.
};

/// Angular-margin logits. `features` is D×N (one aggregated feature per
/// column), `weight` is N×D (one class direction per row). Row p of the
/// result belongs to column targets[p] of `features` and holds
///   z_j = ‖F‖·cos θ_j   for j ≠ targets[p]
///   z_j = ‖F‖·ψ(θ_j)    for j = targets[p]
/// where θ_j is the angle between weight row j and F. Targets must have a
/// non-zero feature column.
Var angular_margin_logits(Var features, Var weight, std::span<const std::size_t> targets, int margin,
                          PsiForm form);

// ---- value-level helpers (no graph) ---------------------------------------

/// Mean of the k largest entries; ties go to the lower index.
double topk_mean(std::span<const double> values, std::size_t k);
/// Indices of the k largest entries, ties to the lower index.
std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k);
std::vector<double> softmax(std::span<const double> scores);

/// Chebyshev evaluation of cos(mθ) and its derivative with respect to cos θ.
struct Chebyshev {
  double value;       // T_m(c)
  double derivative;  // m·U_{m−1}(c)
};
Chebyshev chebyshev(int m, double c);

/// ψ value and dψ/d(cos θ) at cosine c.
struct PsiValue {
  double value;
  double derivative;
};
PsiValue psi_from_cosine(double c, int margin, PsiForm form);

}  // namespace segloc::ad
