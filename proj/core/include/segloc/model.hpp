#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

#include "segloc/autodiff.hpp"
#include "segloc/seeds.hpp"
#include "segloc/tensor.hpp"

namespace segloc {

/// Trainable tensors of the two-branch localizer.
///
///   f     = relu(x·embed_weight + embed_bias)          l×D
///   C_cls = f·cls_weight + cls_bias                    l×N
///   C_loc = f·loc_weight + loc_bias                    l×N
///
/// sphere_weight (N×D, no bias) holds one class direction per row and is
/// only read by the sphere loss.
struct Parameters {
  Tensor2 embed_weight;
  Tensor2 embed_bias;
  Tensor2 cls_weight;
  Tensor2 cls_bias;
  Tensor2 loc_weight;
  Tensor2 loc_bias;
  Tensor2 sphere_weight;

  static constexpr std::size_t kCount = 7;
  /// Serialization and optimizer order.
  static constexpr std::array<std::string_view, kCount> kNames = {
      "embed.weight", "embed.bias", "cls.weight", "cls.bias", "loc.weight", "loc.bias", "sphere.weight"};

  std::array<Tensor2*, kCount> tensors();
  std::array<const Tensor2*, kCount> tensors() const;

  std::size_t feature_dim() const noexcept { return embed_weight.rows(); }
  std::size_t num_classes() const noexcept { return cls_weight.cols(); }
  std::size_t scalar_count() const;
  bool all_finite() const;

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

/// Weights uniform in ±1/√fan_in, biases zero, sphere rows unit-norm.
Parameters init_params(std::size_t feature_dim, std::size_t num_classes, std::uint64_t seed);

/// Parameters bound into a graph as trainable leaves.
struct ParamVars {
  ad::Var embed_weight;
  ad::Var embed_bias;
  ad::Var cls_weight;
  ad::Var cls_bias;
  ad::Var loc_weight;
  ad::Var loc_bias;
  ad::Var sphere_weight;

  static ParamVars bind(ad::Graph& graph, const Parameters& params);
  /// Binds as constants (inference).
  static ParamVars bind_constant(ad::Graph& graph, const Parameters& params);
  std::array<ad::Var, Parameters::kCount> vars() const;
};

/// Differentiable forward outputs for one video.
struct CasPair {
  ad::Var f;  ///< embedding after dropout (when active)
  ad::Var cls;
  ad::Var loc;
  /// Embedding before dropout; the same node as `f` when dropout is off.
  ad::Var embedding;
};

inline constexpr double kDefaultDropoutRate = 0.7;

/// Inverted-dropout mask: each entry is 0 with probability `rate`, else
/// 1/(1−rate).
Tensor2 dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng);

/// Runs the network on x. A non-null `dropout` mask (l×D) is applied to f.
CasPair forward(ad::Graph& graph, const ParamVars& params, const Tensor2& x, const Tensor2* dropout = nullptr);

/// Convenience for forward(...) with a freshly drawn mask when `dropout_active`.
CasPair forward(ad::Graph& graph, const ParamVars& params, const Tensor2& x, bool dropout_active, Rng& rng,
                double rate = kDefaultDropoutRate);

/// Plain values of a dropout-free forward pass.
struct CasValues {
  Tensor2 f;
  Tensor2 cls;
  Tensor2 loc;
};
CasValues infer(const Parameters& params, const Tensor2& x);

}  // namespace segloc
