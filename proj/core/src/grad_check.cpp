#include "segloc/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "segloc/errors.hpp"

namespace segloc::ad {

namespace {

double evaluate(const LossBuilder& builder, const std::vector<Tensor2>& params) {
  Graph graph;
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const Tensor2& p : params) vars.push_back(graph.constant(p));
  const double loss = builder(graph, vars).value().item();
  if (!std::isfinite(loss)) throw NumericError("grad_check: loss is not finite");
  return loss;
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& builder, std::span<const Tensor2> params, double epsilon) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw std::invalid_argument("grad_check: epsilon " + std::to_string(epsilon) +
                                " outside [1e-7, 1e-3]");
  }
  GradCheckReport report;

  std::vector<Tensor2> analytic;
  {
    Graph graph;
    std::vector<Var> vars;
    for (const Tensor2& p : params) vars.push_back(graph.parameter(p));
    const Var loss = builder(graph, vars);
    report.loss = loss.value().item();
    if (!std::isfinite(report.loss)) throw NumericError("grad_check: loss is not finite");
    graph.backward(loss);
    for (const Var& v : vars) analytic.push_back(v.grad());
  }

  std::vector<Tensor2> work(params.begin(), params.end());
  for (std::size_t p = 0; p < work.size(); ++p) {
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double original = work[p][i];
      work[p][i] = original + epsilon;
      const double plus = evaluate(builder, work);
      work[p][i] = original - epsilon;
      const double minus = evaluate(builder, work);
      work[p][i] = original;

      const double fd = (plus - minus) / (2.0 * epsilon);
      const double ga = analytic[p][i];
      const double denom = std::max({1.0, std::abs(ga), std::abs(fd)});
      report.max_rel_error = std::max(report.max_rel_error, std::abs(ga - fd) / denom);
      ++report.entries;
    }
  }
  return report;
}

}  // namespace segloc::ad
