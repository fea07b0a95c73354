#include "segloc/model.hpp"

#include <cmath>
#include <string>

#include "segloc/errors.hpp"

namespace segloc {

std::array<Tensor2*, Parameters::kCount> Parameters::tensors() {
  return {&embed_weight, &embed_bias, &cls_weight, &cls_bias, &loc_weight, &loc_bias, &sphere_weight};
}

std::array<const Tensor2*, Parameters::kCount> Parameters::tensors() const {
  return {&embed_weight, &embed_bias, &cls_weight, &cls_bias, &loc_weight, &loc_bias, &sphere_weight};
}

std::size_t Parameters::scalar_count() const {
  std::size_t n = 0;
  for (const Tensor2* t : tensors()) n += t->size();
  return n;
}

bool Parameters::all_finite() const {
  for (const Tensor2* t : tensors())
    if (!t->all_finite()) return false;
  return true;
}

Parameters init_params(std::size_t feature_dim, std::size_t num_classes, std::uint64_t seed) {
  if (feature_dim < 1 || num_classes < 1) throw std::invalid_argument("init_params: D and N must be >= 1");
  Rng rng(seed);
  const auto uniform = [&](std::size_t rows, std::size_t cols, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor2 t(rows, cols);
    for (double& v : t.data()) v = dist(rng);
    return t;
  };

  Parameters p;
  const std::size_t D = feature_dim;
  const std::size_t N = num_classes;
  p.embed_weight = uniform(D, D, D);
  p.embed_bias = Tensor2(1, D);
  p.cls_weight = uniform(D, N, D);
  p.cls_bias = Tensor2(1, N);
  p.loc_weight = uniform(D, N, D);
  p.loc_bias = Tensor2(1, N);
  p.sphere_weight = uniform(N, D, D);
  for (std::size_t n = 0; n < N; ++n) {
    auto row = p.sphere_weight.row(n);
    double norm = l2_norm(row);
    while (norm == 0.0) {  // vanishingly unlikely; redraw rather than divide by zero
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      for (double& v : row) v = dist(rng);
      norm = l2_norm(row);
    }
    for (double& v : row) v /= norm;
  }
  return p;
}

ParamVars ParamVars::bind(ad::Graph& g, const Parameters& p) {
  return {g.parameter(p.embed_weight), g.parameter(p.embed_bias),  g.parameter(p.cls_weight),
          g.parameter(p.cls_bias),     g.parameter(p.loc_weight),  g.parameter(p.loc_bias),
          g.parameter(p.sphere_weight)};
}

ParamVars ParamVars::bind_constant(ad::Graph& g, const Parameters& p) {
  return {g.constant(p.embed_weight), g.constant(p.embed_bias), g.constant(p.cls_weight),
          g.constant(p.cls_bias),     g.constant(p.loc_weight), g.constant(p.loc_bias),
          g.constant(p.sphere_weight)};
}

std::array<ad::Var, Parameters::kCount> ParamVars::vars() const {
  return {embed_weight, embed_bias, cls_weight, cls_bias, loc_weight, loc_bias, sphere_weight};
}

Tensor2 dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout_mask: rate must be in [0, 1)");
  Tensor2 mask(rows, cols);
  const double keep_scale = 1.0 / (1.0 - rate);
  std::bernoulli_distribution drop(rate);
  for (double& v : mask.data()) v = drop(rng) ? 0.0 : keep_scale;
  return mask;
}

CasPair forward(ad::Graph& graph, const ParamVars& params, const Tensor2& x, const Tensor2* dropout) {
  if (!x.all_finite()) throw NumericError("forward: input features are not finite");
  const ad::Var input = graph.constant(x);
  const ad::Var embedding = ad::relu(ad::linear(input, params.embed_weight, params.embed_bias));
  const ad::Var f = dropout != nullptr ? ad::mul_constant(embedding, *dropout) : embedding;
  return {f, ad::linear(f, params.cls_weight, params.cls_bias), ad::linear(f, params.loc_weight, params.loc_bias),
          embedding};
}

CasPair forward(ad::Graph& graph, const ParamVars& params, const Tensor2& x, bool dropout_active, Rng& rng,
                double rate) {
  if (!dropout_active || rate == 0.0) return forward(graph, params, x, nullptr);
  const Tensor2 mask = dropout_mask(x.rows(), params.embed_weight.value().cols(), rate, rng);
  return forward(graph, params, x, &mask);
}

CasValues infer(const Parameters& params, const Tensor2& x) {
  ad::Graph graph;
  const ParamVars vars = ParamVars::bind_constant(graph, params);
  const CasPair out = forward(graph, vars, x, nullptr);
  return {out.f.value(), out.cls.value(), out.loc.value()};
}

}  // namespace segloc
