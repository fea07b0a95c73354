#include "segloc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "segloc/errors.hpp"

namespace segloc::ad {

namespace {

std::string shape_str(const Tensor2& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

void require_same_shape(const Tensor2& a, const Tensor2& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                     " differ");
  }
}

void require_same_graph(Var a, Var b, const char* op) {
  if (&a.graph() != &b.graph()) throw std::invalid_argument(std::string(op) + ": vars from different graphs");
}

}  // namespace

const Tensor2& Var::value() const { return graph_->value(id_); }
const Tensor2& Var::grad() const { return graph_->grad(id_); }

Var Graph::parameter(Tensor2 value) {
  Node node;
  node.grad = Tensor2(value.rows(), value.cols());
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor2 value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor2 value, std::initializer_list<Var> parents, BackwardFn backward) {
  Node node;
  for (Var p : parents) {
    if (&p.graph() != this) throw std::invalid_argument("Graph::record: parent from another graph");
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (node.requires_grad) {
    node.grad = Tensor2(value.rows(), value.cols());
    node.backward = std::move(backward);
  }
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor2& Graph::grad(std::size_t id) const { return nodes_[id].grad; }

Tensor2& Graph::grad_buffer(Var v) { return nodes_[v.id()].grad; }

void Graph::backward(Var root) {
  if (&root.graph() != this) throw std::invalid_argument("Graph::backward: root from another graph");
  Node& r = nodes_[root.id()];
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw ShapeError("Graph::backward: root must be 1x1, got " + shape_str(r.value));
  }
  if (!r.requires_grad) return;
  r.grad(0, 0) += 1.0;
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.backward) node.backward(*this, node.grad);
  }
}

// ---- ops -------------------------------------------------------------------

Var linear(Var x, Var weight, Var bias) {
  require_same_graph(x, weight, "linear");
  require_same_graph(x, bias, "linear");
  const Tensor2& xv = x.value();
  const Tensor2& wv = weight.value();
  const Tensor2& bv = bias.value();
  if (xv.cols() != wv.rows()) {
    throw ShapeError("linear: input " + shape_str(xv) + " vs weight " + shape_str(wv));
  }
  if (bv.rows() != 1 || bv.cols() != wv.cols()) {
    throw ShapeError("linear: bias " + shape_str(bv) + " for weight " + shape_str(wv));
  }
  Tensor2 out = segloc::matmul(xv, wv);
  for (std::size_t t = 0; t < out.rows(); ++t)
    for (std::size_t k = 0; k < out.cols(); ++k) out(t, k) += bv(0, k);

  Graph& g = x.graph();
  return g.record(std::move(out), {x, weight, bias}, [x, weight, bias](Graph& g, const Tensor2& go) {
    if (g.requires_grad(x)) g.grad_buffer(x) += segloc::matmul(go, weight.value().transposed());
    if (g.requires_grad(weight)) g.grad_buffer(weight) += segloc::matmul(x.value().transposed(), go);
    if (g.requires_grad(bias)) {
      Tensor2& gb = g.grad_buffer(bias);
      for (std::size_t t = 0; t < go.rows(); ++t)
        for (std::size_t k = 0; k < go.cols(); ++k) gb(0, k) += go(t, k);
    }
  });
}

Var matmul(Var a, Var b) {
  require_same_graph(a, b, "matmul");
  Tensor2 out = segloc::matmul(a.value(), b.value());
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor2& go) {
    if (g.requires_grad(a)) g.grad_buffer(a) += segloc::matmul(go, b.value().transposed());
    if (g.requires_grad(b)) g.grad_buffer(b) += segloc::matmul(a.value().transposed(), go);
  });
}

Var transpose(Var a) {
  return a.graph().record(a.value().transposed(), {a}, [a](Graph& g, const Tensor2& go) {
    g.grad_buffer(a) += go.transposed();
  });
}

Var relu(Var x) {
  Tensor2 out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.graph().record(std::move(out), {x}, [x](Graph& g, const Tensor2& go) {
    const Tensor2& xv = x.value();
    Tensor2& gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += go[i];
    }
  });
}

Var add(Var a, Var b) {
  require_same_graph(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor2 out = a.value();
  out += b.value();
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph& g, const Tensor2& go) {
    if (g.requires_grad(a)) g.grad_buffer(a) += go;
    if (g.requires_grad(b)) g.grad_buffer(b) += go;
  });
}

Var scale(Var a, double factor) {
  Tensor2 out = a.value();
  out *= factor;
  return a.graph().record(std::move(out), {a}, [a, factor](Graph& g, const Tensor2& go) {
    Tensor2& ga = g.grad_buffer(a);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += factor * go[i];
  });
}

Var mul_constant(Var x, const Tensor2& mask) {
  require_same_shape(x.value(), mask, "mul_constant");
  Tensor2 out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return x.graph().record(std::move(out), {x}, [x, mask](Graph& g, const Tensor2& go) {
    Tensor2& gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += mask[i] * go[i];
  });
}

Var weighted_sum(Var x, const Tensor2& weights) {
  require_same_shape(x.value(), weights, "weighted_sum");
  const Tensor2& xv = x.value();
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (weights[i] != 0.0) s += weights[i] * xv[i];
  }
  return x.graph().record(Tensor2::scalar(s), {x}, [x, weights](Graph& g, const Tensor2& go) {
    Tensor2& gx = g.grad_buffer(x);
    const double up = go(0, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += weights[i] * up;
  });
}

Var sum(Var x) {
  const Tensor2& xv = x.value();
  const double s = std::accumulate(xv.data().begin(), xv.data().end(), 0.0);
  return x.graph().record(Tensor2::scalar(s), {x}, [x](Graph& g, const Tensor2& go) {
    Tensor2& gx = g.grad_buffer(x);
    for (double& v : gx.data()) v += go(0, 0);
  });
}

namespace {

// Softmax / log-softmax over "lanes": either rows or columns of a matrix.
// `stride` walks along a lane, `lane_step` jumps between lanes.
struct LaneLayout {
  std::size_t lanes;
  std::size_t length;
  std::size_t lane_step;
  std::size_t stride;
};

LaneLayout rows_layout(const Tensor2& t) { return {t.rows(), t.cols(), t.cols(), 1}; }
LaneLayout cols_layout(const Tensor2& t) { return {t.cols(), t.rows(), 1, t.cols()}; }

Tensor2 lane_log_softmax(const Tensor2& x, LaneLayout L) {
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t lane = 0; lane < L.lanes; ++lane) {
    const std::size_t base = lane * L.lane_step;
    double mx = -INFINITY;
    for (std::size_t i = 0; i < L.length; ++i) mx = std::max(mx, x[base + i * L.stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < L.length; ++i) z += std::exp(x[base + i * L.stride] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < L.length; ++i) out[base + i * L.stride] = x[base + i * L.stride] - lse;
  }
  return out;
}

Tensor2 lane_softmax(const Tensor2& x, LaneLayout L) {
  Tensor2 out(x.rows(), x.cols());
  for (std::size_t lane = 0; lane < L.lanes; ++lane) {
    const std::size_t base = lane * L.lane_step;
    double mx = -INFINITY;
    for (std::size_t i = 0; i < L.length; ++i) mx = std::max(mx, x[base + i * L.stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < L.length; ++i) {
      const double e = std::exp(x[base + i * L.stride] - mx);
      out[base + i * L.stride] = e;
      z += e;
    }
    for (std::size_t i = 0; i < L.length; ++i) out[base + i * L.stride] /= z;
  }
  return out;
}

Var softmax_impl(Var x, LaneLayout L) {
  Tensor2 out = lane_softmax(x.value(), L);
  const std::size_t id = x.graph().size();
  return x.graph().record(std::move(out), {x}, [x, L, id](Graph& g, const Tensor2& go) {
    const Tensor2& y = g.value(id);
    Tensor2& gx = g.grad_buffer(x);
    for (std::size_t lane = 0; lane < L.lanes; ++lane) {
      const std::size_t base = lane * L.lane_step;
      double dotp = 0.0;
      for (std::size_t i = 0; i < L.length; ++i) {
        const std::size_t k = base + i * L.stride;
        dotp += go[k] * y[k];
      }
      for (std::size_t i = 0; i < L.length; ++i) {
        const std::size_t k = base + i * L.stride;
        gx[k] += y[k] * (go[k] - dotp);
      }
    }
  });
}

Var log_softmax_impl(Var x, LaneLayout L) {
  Tensor2 out = lane_log_softmax(x.value(), L);
  const std::size_t id = x.graph().size();
  return x.graph().record(std::move(out), {x}, [x, L, id](Graph& g, const Tensor2& go) {
    const Tensor2& y = g.value(id);
    Tensor2& gx = g.grad_buffer(x);
    for (std::size_t lane = 0; lane < L.lanes; ++lane) {
      const std::size_t base = lane * L.lane_step;
      double total = 0.0;
      for (std::size_t i = 0; i < L.length; ++i) total += go[base + i * L.stride];
      for (std::size_t i = 0; i < L.length; ++i) {
        const std::size_t k = base + i * L.stride;
        gx[k] += go[k] - std::exp(y[k]) * total;
      }
    }
  });
}

}  // namespace

Var softmax_rows(Var x) { return softmax_impl(x, rows_layout(x.value())); }
Var log_softmax_rows(Var x) { return log_softmax_impl(x, rows_layout(x.value())); }
Var softmax_cols(Var x) { return softmax_impl(x, cols_layout(x.value())); }
Var log_softmax_cols(Var x) { return log_softmax_impl(x, cols_layout(x.value())); }

Var topk_mean_cols(Var x, std::size_t k) {
  const Tensor2& xv = x.value();
  if (k < 1 || k > xv.rows()) {
    throw std::out_of_range("topk_mean_cols: k=" + std::to_string(k) + " outside [1, " +
                            std::to_string(xv.rows()) + "]");
  }
  Tensor2 out(1, xv.cols());
  std::vector<std::vector<std::size_t>> picked(xv.cols());
  for (std::size_t n = 0; n < xv.cols(); ++n) {
    const std::vector<double> column = xv.column(n);
    picked[n] = topk_indices(column, k);
    double s = 0.0;
    for (std::size_t t : picked[n]) s += column[t];
    out(0, n) = s / static_cast<double>(k);
  }
  return x.graph().record(std::move(out), {x}, [x, k, picked = std::move(picked)](Graph& g, const Tensor2& go) {
    Tensor2& gx = g.grad_buffer(x);
    const double inv_k = 1.0 / static_cast<double>(k);
    for (std::size_t n = 0; n < picked.size(); ++n)
      for (std::size_t t : picked[n]) gx(t, n) += go(0, n) * inv_k;
  });
}

Var pairwise_smoothness(Var x, const Tensor2& similarity) {
  const Tensor2& xv = x.value();
  const std::size_t l = xv.rows();
  if (similarity.rows() != l || similarity.cols() != l) {
    throw ShapeError("pairwise_smoothness: similarity " + shape_str(similarity) + " for " +
                     std::to_string(l) + " rows");
  }
  double total = 0.0;
  for (std::size_t n = 0; n < xv.cols(); ++n) {
    for (std::size_t i = 0; i < l; ++i) {
      for (std::size_t j = 0; j < l; ++j) {
        const double d = xv(i, n) - xv(j, n);
        total += similarity(i, j) * d * d;
      }
    }
  }
  return x.graph().record(Tensor2::scalar(total), {x}, [x, similarity](Graph& g, const Tensor2& go) {
    const Tensor2& xv = x.value();
    Tensor2& gx = g.grad_buffer(x);
    const std::size_t l = xv.rows();
    const double up = go(0, 0);
    for (std::size_t n = 0; n < xv.cols(); ++n) {
      for (std::size_t i = 0; i < l; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < l; ++j) {
          acc += (similarity(i, j) + similarity(j, i)) * (xv(i, n) - xv(j, n));
        }
        gx(i, n) += 2.0 * acc * up;
      }
    }
  });
}

Var squared_error(Var x, const Tensor2& target) {
  require_same_shape(x.value(), target, "squared_error");
  const Tensor2& xv = x.value();
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double d = xv[i] - target[i];
    total += d * d;
  }
  return x.graph().record(Tensor2::scalar(total), {x}, [x, target](Graph& g, const Tensor2& go) {
    const Tensor2& xv = x.value();
    Tensor2& gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += 2.0 * (xv[i] - target[i]) * go(0, 0);
  });
}

Chebyshev chebyshev(int m, double c) {
  // T_0 = 1, T_1 = c; U_0 = 1, U_1 = 2c; both follow P_{k+1} = 2c·P_k − P_{k−1}.
  if (m == 0) return {1.0, 0.0};
  double t_prev = 1.0, t_cur = c;
  double u_prev = 1.0, u_cur = 2.0 * c;
  for (int k = 1; k < m; ++k) {
    const double t_next = 2.0 * c * t_cur - t_prev;
    t_prev = t_cur;
    t_cur = t_next;
    const double u_next = 2.0 * c * u_cur - u_prev;
    u_prev = u_cur;
    u_cur = u_next;
  }
  // After the loop u_prev holds U_{m−1}.
  return {t_cur, static_cast<double>(m) * u_prev};
}

PsiValue psi_from_cosine(double c, int margin, PsiForm form) {
  c = std::clamp(c, -1.0, 1.0);
  const double theta = std::acos(c);
  int k = static_cast<int>(std::floor(margin * theta / M_PI));
  k = std::clamp(k, 0, margin - 1);
  const Chebyshev cheb = chebyshev(margin, c);
  const double sign = (k % 2 == 0) ? 1.0 : -1.0;
  const double offset = form == PsiForm::kStandard ? 2.0 * k : 2.0;
  return {sign * cheb.value - offset, sign * cheb.derivative};
}

Var angular_margin_logits(Var features, Var weight, std::span<const std::size_t> targets, int margin,
                          PsiForm form) {
  require_same_graph(features, weight, "angular_margin_logits");
  if (margin < 1) throw std::invalid_argument("angular_margin_logits: margin must be >= 1");
  const Tensor2& F = features.value();
  const Tensor2& W = weight.value();
  const std::size_t D = F.rows();
  const std::size_t N = W.rows();
  if (W.cols() != D || F.cols() != N) {
    throw ShapeError("angular_margin_logits: features " + shape_str(F) + " vs weight " + shape_str(W));
  }
  std::vector<double> w_norm(N);
  for (std::size_t j = 0; j < N; ++j) {
    w_norm[j] = l2_norm(W.row(j));
    if (w_norm[j] == 0.0) throw NumericError("angular_margin_logits: zero weight row " + std::to_string(j));
  }
  const std::vector<std::size_t> tgt(targets.begin(), targets.end());
  Tensor2 out(tgt.size(), N);
  for (std::size_t p = 0; p < tgt.size(); ++p) {
    const std::size_t n = tgt[p];
    if (n >= N) throw std::out_of_range("angular_margin_logits: target class out of range");
    const std::vector<double> f = F.column(n);
    const double rho = l2_norm(f);
    if (rho == 0.0) throw NumericError("angular_margin_logits: zero feature column " + std::to_string(n));
    for (std::size_t j = 0; j < N; ++j) {
      const double proj = dot(W.row(j), f) / w_norm[j];  // ‖F‖·cos θ_j
      out(p, j) = j == n ? rho * psi_from_cosine(proj / rho, margin, form).value : proj;
    }
  }

  return features.graph().record(
      std::move(out), {features, weight},
      [features, weight, tgt, margin, form, w_norm](Graph& g, const Tensor2& go) {
        const Tensor2& F = features.value();
        const Tensor2& W = weight.value();
        const std::size_t D = F.rows();
        const std::size_t N = W.rows();
        const bool want_f = g.requires_grad(features);
        const bool want_w = g.requires_grad(weight);
        for (std::size_t p = 0; p < tgt.size(); ++p) {
          const std::size_t n = tgt[p];
          const std::vector<double> f = F.column(n);
          const double rho = l2_norm(f);
          std::vector<double> df(D, 0.0);
          for (std::size_t j = 0; j < N; ++j) {
            const double up = go(p, j);
            if (up == 0.0) continue;
            const auto wj = W.row(j);
            const double wn = w_norm[j];
            const double proj = dot(wj, f) / wn;
            if (j != n) {
              // z = w·f/‖w‖
              for (std::size_t d = 0; d < D; ++d) df[d] += up * wj[d] / wn;
              if (want_w) {
                auto gw = g.grad_buffer(weight).row(j);
                for (std::size_t d = 0; d < D; ++d) gw[d] += up * (f[d] / wn - proj * wj[d] / (wn * wn));
              }
            } else {
              // z = ρ·ψ(c), c = w·f/(‖w‖ρ)
              const double c = std::clamp(proj / rho, -1.0, 1.0);
              const PsiValue psi = psi_from_cosine(c, margin, form);
              const double dz_dc = rho * psi.derivative;
              for (std::size_t d = 0; d < D; ++d) {
                const double dc_df = wj[d] / (wn * rho) - c * f[d] / (rho * rho);
                df[d] += up * (psi.value * f[d] / rho + dz_dc * dc_df);
              }
              if (want_w) {
                auto gw = g.grad_buffer(weight).row(j);
                for (std::size_t d = 0; d < D; ++d) {
                  const double dc_dw = f[d] / (wn * rho) - c * wj[d] / (wn * wn);
                  gw[d] += up * dz_dc * dc_dw;
                }
              }
            }
          }
          if (want_f) {
            Tensor2& gf = g.grad_buffer(features);
            for (std::size_t d = 0; d < D; ++d) gf(d, n) += df[d];
          }
        }
      });
}

// ---- value-level helpers ---------------------------------------------------

std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k) {
  if (k < 1 || k > values.size()) {
    throw std::out_of_range("topk: k=" + std::to_string(k) + " outside [1, " +
                            std::to_string(values.size()) + "]");
  }
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  order.resize(k);
  return order;
}

double topk_mean(std::span<const double> values, std::size_t k) {
  double s = 0.0;
  for (std::size_t i : topk_indices(values, k)) s += values[i];
  return s / static_cast<double>(k);
}

std::vector<double> softmax(std::span<const double> scores) {
  const Tensor2 t = lane_softmax(Tensor2::row_vector(scores), rows_layout(Tensor2(1, scores.size())));
  return {t.data().begin(), t.data().end()};
}

}  // namespace segloc::ad
