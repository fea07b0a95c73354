#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "segloc/autodiff.hpp"
#include "segloc/datamodel.hpp"
#include "segloc/model.hpp"
#include "segloc/tensor.hpp"

namespace segloc {

enum class SimilarityMode {
  kLiteral,            ///< S = f·fᵀ
  kNormalizedClamped,  ///< cosine of rows, negatives → 0, diagonal = 1
};

enum class SegmentLoss {
  kPartial,  ///< cross-entropy over labeled segments of the time-softmaxed CAS
  kL2,       ///< Σ (C_loc − u)², ablation baseline
};

std::string_view to_string(SimilarityMode mode);
SimilarityMode parse_similarity_mode(std::string_view text);

/// Trade-off weights and switches of the four-term objective
///   L = L_cls + α·L_segment + β·L_sphere + γ·L_prop.
struct LossWeights {
  double alpha = 0.1;
  double beta = 0.0001;
  double gamma = 0.02;
  /// r used for top-k when a video has no labeled segments.
  double r_fallback = 8.0;
  int margin_m = 4;
  SimilarityMode similarity_mode = SimilarityMode::kNormalizedClamped;
  bool prop_normalize = true;
  ad::PsiForm psi_form = ad::PsiForm::kStandard;
  SegmentLoss segment_loss = SegmentLoss::kPartial;
  /// Divide y by its sum in the classification loss.
  bool normalize_y = false;

  void validate() const;
};

/// k = max(1, floor(l / r)) with r = 2Q when Q ≥ 1, else r_fallback.
std::size_t topk_count(std::size_t length, std::size_t labeled_segments, double r_fallback);

/// Per-class top-k mean of a CAS (1×N).
ad::Var class_scores(ad::Var cas, std::size_t labeled_segments, double r_fallback);
std::vector<double> class_scores(const Tensor2& cas, std::size_t labeled_segments, double r_fallback);

/// (1/N)·Σ −y(n)·log softmax(s)(n). Zero (with a warning) when y is empty.
ad::Var classification_loss(ad::Var scores, std::span<const std::uint8_t> y, bool normalize_y = false);

/// Σ_{(t,n)∈Ω} −log a(t,n), a = softmax over time of C_loc.
ad::Var partial_segment_loss(ad::Var loc, std::span<const SegmentLabel> labeled);
/// Σ_{t,n} (C_loc(t,n) − u(t,n))².
ad::Var l2_segment_loss(ad::Var loc, const Tensor2& u);

/// Per-class median of each column (mean of the two middle values for even l).
std::vector<double> column_medians(const Tensor2& a);
/// Mask with 1 where a(t,n) ≥ median(a(:,n)).
Tensor2 attention_mask(const Tensor2& a);
/// A = a ∘ mask, mask held constant.
ad::Var attention(ad::Var a);

/// F = fᵀ·A(:,n) for one column.
std::vector<double> classwise_feature(const Tensor2& f, std::span<const double> attention_column);

/// ψ(θ) for θ ∈ [0, π]; θ outside the range is clamped with a warning.
double psi(double theta, int margin, ad::PsiForm form = ad::PsiForm::kStandard);

/// Angular-margin loss over the aggregated feature of each present class,
/// averaged over present classes. Classes whose aggregated feature is zero
/// are skipped with a warning.
ad::Var sphere_loss(ad::Var f, ad::Var a, std::span<const std::uint8_t> y, ad::Var sphere_weight, int margin,
                    ad::PsiForm form = ad::PsiForm::kStandard);

/// Segment similarity, treated as a constant by the propagation loss.
Tensor2 similarity_matrix(const Tensor2& f, SimilarityMode mode);

/// Σ_n Σ_{i,j} S(i,j)·(C_loc(i,n) − C_loc(j,n))², divided by l² when `normalize`.
ad::Var propagation_loss(ad::Var loc, const Tensor2& similarity, bool normalize = true);

struct LossTerms {
  ad::Var total;
  double cls = 0.0;
  double segment = 0.0;
  double sphere = 0.0;
  double prop = 0.0;
};

/// Builds L for one video. Terms with zero weight are not built and report 0.
/// `similarity`, when given, replaces the S computed from the embedding.
LossTerms total_loss(const CasPair& cas, const LabelSet& labels, const LossWeights& weights, ad::Var sphere_weight,
                     const Tensor2* similarity = nullptr);

}  // namespace segloc
