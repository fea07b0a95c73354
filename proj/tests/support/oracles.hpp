#pragma once

// Independent reference implementations used only by tests. None of these
// call into the code paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "segloc/tensor.hpp"

namespace segloc::oracle {

inline Tensor2 triple_loop_matmul(const Tensor2& a, const Tensor2& b) {
  Tensor2 out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

/// Σ_n 2·c_nᵀ (Deg − S_sym) c_n with S_sym = (S + Sᵀ)/2: the graph-Laplacian
/// form of the pairwise smoothness sum.
inline double laplacian_smoothness(const Tensor2& x, const Tensor2& S) {
  const std::size_t l = x.rows();
  double total = 0.0;
  for (std::size_t n = 0; n < x.cols(); ++n) {
    for (std::size_t i = 0; i < l; ++i) {
      double degree = 0.0;
      for (std::size_t j = 0; j < l; ++j) degree += 0.5 * (S(i, j) + S(j, i));
      double row = degree * x(i, n);
      for (std::size_t j = 0; j < l; ++j) row -= 0.5 * (S(i, j) + S(j, i)) * x(j, n);
      total += 2.0 * x(i, n) * row;
    }
  }
  return total;
}

/// Scalar adaptive-moment reference, one parameter.
struct ScalarAdam {
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double param, double grad, double lr) {
    ++t;
    m = 0.9 * m + 0.1 * grad;
    v = 0.999 * v + 0.001 * grad * grad;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    return param - lr * mh / (std::sqrt(vh) + 1e-8);
  }
};

// ---- detection AP by exhaustive search ----------------------------------

struct MicroProposal {
  int video;
  int start, end;  // inclusive segments
  double score;
};
struct MicroGt {
  int video;
  int start, end;
};

/// Exact rational p/q with small integers.
struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 1;
  Fraction operator+(const Fraction& o) const {
    Fraction r{num * o.den + o.num * den, den * o.den};
    const std::int64_t g = std::gcd(r.num, r.den);
    if (g > 1) {
      r.num /= g;
      r.den /= g;
    }
    return r;
  }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

/// IoU of integer segment ranges as an exact pair (inter, union).
inline std::pair<int, int> iou_parts(int s1, int e1, int s2, int e2) {
  const int inter = std::max(0, std::min(e1, e2) + 1 - std::max(s1, s2));
  const int uni = (e1 - s1 + 1) + (e2 - s2 + 1) - inter;
  return {inter, uni};
}

/// Enumerates every injective assignment of proposals to ground truths
/// (or to nothing) and keeps the unique one satisfying the greedy rule:
/// in rank order, a proposal takes the unused same-video ground truth with
/// the largest IoU ≥ threshold (lowest index on ties), or nothing if none
/// exists. AP is then Σ hits_k/rank_k / |GT| in exact rationals.
///
/// Ranking: score descending, then video id string, then start.
inline double brute_force_ap(std::vector<MicroProposal> props, const std::vector<MicroGt>& gts, double threshold,
                             const std::vector<std::string>& video_ids) {
  if (gts.empty()) return 0.0;
  std::stable_sort(props.begin(), props.end(), [&](const MicroProposal& a, const MicroProposal& b) {
    if (a.score != b.score) return a.score > b.score;
    if (video_ids[a.video] != video_ids[b.video]) return video_ids[a.video] < video_ids[b.video];
    return a.start < b.start;
  });
  const int P = static_cast<int>(props.size());
  const int G = static_cast<int>(gts.size());
  const auto qualifies = [&](int p, int g) {
    if (props[p].video != gts[g].video) return false;
    const auto [inter, uni] = iou_parts(props[p].start, props[p].end, gts[g].start, gts[g].end);
    return static_cast<double>(inter) / static_cast<double>(uni) >= threshold;
  };
  const auto iou_less = [&](int p, int g1, int g2) {  // IoU(p,g1) < IoU(p,g2), exact
    const auto [i1, u1] = iou_parts(props[p].start, props[p].end, gts[g1].start, gts[g1].end);
    const auto [i2, u2] = iou_parts(props[p].start, props[p].end, gts[g2].start, gts[g2].end);
    return static_cast<std::int64_t>(i1) * u2 < static_cast<std::int64_t>(i2) * u1;
  };

  std::optional<std::vector<int>> accepted;
  std::vector<int> assign(P, -1);
  // Odometer over {−1, 0..G−1}^P.
  const auto advance = [&]() {
    for (int p = 0; p < P; ++p) {
      if (++assign[p] < G) return true;
      assign[p] = -1;
    }
    return false;
  };
  do {
    // injective + valid
    bool ok = true;
    std::vector<bool> taken(G, false);
    for (int p = 0; p < P && ok; ++p) {
      const int g = assign[p];
      if (g < 0) continue;
      if (taken[g] || !qualifies(p, g)) ok = false;
      else taken[g] = true;
    }
    if (!ok) continue;
    // greedy consistency
    std::vector<bool> used(G, false);
    for (int p = 0; p < P && ok; ++p) {
      int best = -1;
      for (int g = 0; g < G; ++g) {
        if (used[g] || !qualifies(p, g)) continue;
        if (best < 0 || iou_less(p, best, g)) best = g;
      }
      if (assign[p] != best) ok = false;
      if (best >= 0) used[best] = true;
    }
    if (!ok) continue;
    if (accepted) throw std::logic_error("brute_force_ap: greedy assignment not unique");
    accepted = assign;
  } while (advance());

  if (!accepted) throw std::logic_error("brute_force_ap: no greedy assignment found");
  Fraction total;
  std::int64_t hits = 0;
  for (int p = 0; p < P; ++p) {
    if ((*accepted)[p] < 0) continue;
    ++hits;
    total = total + Fraction{hits, p + 1};
  }
  Fraction ap{total.num, total.den * G};
  return ap.value();
}

}  // namespace segloc::oracle
