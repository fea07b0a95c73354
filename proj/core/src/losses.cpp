#include "segloc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

#include "segloc/errors.hpp"
#include "segloc/log.hpp"

namespace segloc {

std::string_view to_string(SimilarityMode mode) {
  return mode == SimilarityMode::kLiteral ? "literal" : "normalized-clamped";
}

SimilarityMode parse_similarity_mode(std::string_view text) {
  if (text == "literal") return SimilarityMode::kLiteral;
  if (text == "normalized-clamped" || text == "normalized") return SimilarityMode::kNormalizedClamped;
  throw std::invalid_argument("unknown similarity mode '" + std::string(text) +
                              "' (expected literal or normalized-clamped)");
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) {
    throw std::invalid_argument("loss weights alpha, beta, gamma must be >= 0");
  }
  if (margin_m < 1) throw std::invalid_argument("angular margin m must be an integer >= 1");
  if (!(r_fallback > 0.0)) throw std::invalid_argument("r_fallback must be > 0");
}

std::size_t topk_count(std::size_t length, std::size_t labeled_segments, double r_fallback) {
  if (length == 0) throw std::invalid_argument("topk_count: empty sequence");
  const double r = labeled_segments >= 1 ? 2.0 * static_cast<double>(labeled_segments) : r_fallback;
  const double k = std::floor(static_cast<double>(length) / r);
  return std::clamp<std::size_t>(k < 1.0 ? 1 : static_cast<std::size_t>(k), 1, length);
}

ad::Var class_scores(ad::Var cas, std::size_t labeled_segments, double r_fallback) {
  return ad::topk_mean_cols(cas, topk_count(cas.rows(), labeled_segments, r_fallback));
}

std::vector<double> class_scores(const Tensor2& cas, std::size_t labeled_segments, double r_fallback) {
  const std::size_t k = topk_count(cas.rows(), labeled_segments, r_fallback);
  std::vector<double> s(cas.cols());
  for (std::size_t n = 0; n < cas.cols(); ++n) s[n] = ad::topk_mean(cas.column(n), k);
  return s;
}

ad::Var classification_loss(ad::Var scores, std::span<const std::uint8_t> y, bool normalize_y) {
  const std::size_t N = scores.cols();
  if (scores.rows() != 1 || y.size() != N) throw ShapeError("classification_loss: scores/labels shape mismatch");
  const double positives = static_cast<double>(std::count_if(y.begin(), y.end(), [](auto v) { return v != 0; }));
  if (positives == 0.0) {
    warn("classification_loss: video has no positive class; loss is 0");
    return scores.graph().constant(Tensor2::scalar(0.0));
  }
  Tensor2 weights(1, N);
  const double norm = normalize_y ? positives : 1.0;
  for (std::size_t n = 0; n < N; ++n) {
    if (y[n]) weights(0, n) = -1.0 / (norm * static_cast<double>(N));
  }
  return ad::weighted_sum(ad::log_softmax_rows(scores), weights);
}

ad::Var partial_segment_loss(ad::Var loc, std::span<const SegmentLabel> labeled) {
  if (labeled.empty()) return loc.graph().constant(Tensor2::scalar(0.0));
  Tensor2 weights(loc.rows(), loc.cols());
  for (const auto& s : labeled) {
    if (s.t >= loc.rows() || s.n >= loc.cols()) throw std::out_of_range("partial_segment_loss: label out of range");
    weights(s.t, s.n) = -1.0;
  }
  return ad::weighted_sum(ad::log_softmax_cols(loc), weights);
}

ad::Var l2_segment_loss(ad::Var loc, const Tensor2& u) { return ad::squared_error(loc, u); }

std::vector<double> column_medians(const Tensor2& a) {
  std::vector<double> med(a.cols());
  for (std::size_t n = 0; n < a.cols(); ++n) {
    std::vector<double> col = a.column(n);
    std::sort(col.begin(), col.end());
    const std::size_t l = col.size();
    med[n] = l % 2 == 1 ? col[l / 2] : 0.5 * (col[l / 2 - 1] + col[l / 2]);
  }
  return med;
}

Tensor2 attention_mask(const Tensor2& a) {
  const std::vector<double> tau = column_medians(a);
  Tensor2 mask(a.rows(), a.cols());
  for (std::size_t t = 0; t < a.rows(); ++t)
    for (std::size_t n = 0; n < a.cols(); ++n) mask(t, n) = a(t, n) >= tau[n] ? 1.0 : 0.0;
  return mask;
}

ad::Var attention(ad::Var a) { return ad::mul_constant(a, attention_mask(a.value())); }

std::vector<double> classwise_feature(const Tensor2& f, std::span<const double> attention_column) {
  if (attention_column.size() != f.rows()) throw ShapeError("classwise_feature: length mismatch");
  std::vector<double> F(f.cols(), 0.0);
  for (std::size_t t = 0; t < f.rows(); ++t)
    for (std::size_t d = 0; d < f.cols(); ++d) F[d] += f(t, d) * attention_column[t];
  return F;
}

double psi(double theta, int margin, ad::PsiForm form) {
  if (margin < 1) throw std::invalid_argument("psi: margin must be >= 1");
  if (!(theta >= 0.0 && theta <= std::numbers::pi)) {
    warn("psi: theta " + std::to_string(theta) + " outside [0, pi]; clamped");
    theta = std::clamp(theta, 0.0, std::numbers::pi);
  }
  int k = static_cast<int>(std::floor(margin * theta / std::numbers::pi));
  k = std::clamp(k, 0, margin - 1);
  const double sign = k % 2 == 0 ? 1.0 : -1.0;
  const double offset = form == ad::PsiForm::kStandard ? 2.0 * k : 2.0;
  return sign * std::cos(margin * theta) - offset;
}

ad::Var sphere_loss(ad::Var f, ad::Var a, std::span<const std::uint8_t> y, ad::Var sphere_weight, int margin,
                    ad::PsiForm form) {
  const std::size_t N = a.cols();
  if (y.size() != N || sphere_weight.rows() != N || sphere_weight.cols() != f.cols()) {
    throw ShapeError("sphere_loss: shape mismatch between labels, attention and sphere weight");
  }
  ad::Graph& g = f.graph();
  const ad::Var features = ad::matmul(ad::transpose(f), attention(a));  // D×N, column n = F^n

  std::vector<std::size_t> targets;
  for (std::size_t n = 0; n < N; ++n) {
    if (!y[n]) continue;
    if (l2_norm(features.value().column(n)) == 0.0) {
      warn("sphere_loss: aggregated feature of class " + std::to_string(n) + " is zero; class skipped");
      continue;
    }
    targets.push_back(n);
  }
  if (targets.empty()) return g.constant(Tensor2::scalar(0.0));

  const ad::Var logits = ad::angular_margin_logits(features, sphere_weight, targets, margin, form);
  Tensor2 weights(targets.size(), N);
  for (std::size_t p = 0; p < targets.size(); ++p) weights(p, targets[p]) = -1.0 / static_cast<double>(targets.size());
  return ad::weighted_sum(ad::log_softmax_rows(logits), weights);
}

Tensor2 similarity_matrix(const Tensor2& f, SimilarityMode mode) {
  const std::size_t l = f.rows();
  Tensor2 S(l, l);
  if (mode == SimilarityMode::kLiteral) {
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = i; j < l; ++j) S(i, j) = S(j, i) = dot(f.row(i), f.row(j));
    return S;
  }
  Tensor2 unit = f;
  for (std::size_t i = 0; i < l; ++i) {
    auto row = unit.row(i);
    const double norm = l2_norm(row);
    if (norm > 0.0)
      for (double& v : row) v /= norm;
  }
  for (std::size_t i = 0; i < l; ++i) {
    S(i, i) = 1.0;
    for (std::size_t j = i + 1; j < l; ++j) {
      const double c = std::clamp(dot(unit.row(i), unit.row(j)), 0.0, 1.0);
      S(i, j) = S(j, i) = c;
    }
  }
  return S;
}

ad::Var propagation_loss(ad::Var loc, const Tensor2& similarity, bool normalize) {
  const ad::Var raw = ad::pairwise_smoothness(loc, similarity);
  if (!normalize) return raw;
  const double l = static_cast<double>(loc.rows());
  return ad::scale(raw, 1.0 / (l * l));
}

LossTerms total_loss(const CasPair& cas, const LabelSet& labels, const LossWeights& w, ad::Var sphere_weight,
                     const Tensor2* similarity) {
  w.validate();
  LossTerms terms;
  const std::size_t Q = labels.labeled_segment_count();

  const ad::Var scores = class_scores(cas.cls, Q, w.r_fallback);
  ad::Var total = classification_loss(scores, labels.y, w.normalize_y);
  terms.cls = total.value().item();

  if (w.alpha > 0.0) {
    const ad::Var seg = w.segment_loss == SegmentLoss::kPartial
                            ? partial_segment_loss(cas.loc, labels.segments)
                            : l2_segment_loss(cas.loc, labels.dense(cas.loc.rows()));
    terms.segment = seg.value().item();
    total = ad::add(total, ad::scale(seg, w.alpha));
  }
  if (w.beta > 0.0) {
    const ad::Var a = ad::softmax_cols(cas.loc);
    const ad::Var sph = sphere_loss(cas.f, a, labels.y, sphere_weight, w.margin_m, w.psi_form);
    terms.sphere = sph.value().item();
    total = ad::add(total, ad::scale(sph, w.beta));
  }
  if (w.gamma > 0.0) {
    // S describes the segments themselves, so it is taken before dropout.
    const Tensor2 S = similarity != nullptr ? *similarity : similarity_matrix(cas.embedding.value(), w.similarity_mode);
    const ad::Var prop = propagation_loss(cas.loc, S, w.prop_normalize);
    terms.prop = prop.value().item();
    total = ad::add(total, ad::scale(prop, w.gamma));
  }
  terms.total = total;
  return terms;
}

}  // namespace segloc
