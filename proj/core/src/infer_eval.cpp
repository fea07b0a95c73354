#include "segloc/infer_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "segloc/autodiff.hpp"
#include "segloc/errors.hpp"
#include "segloc/losses.hpp"

namespace segloc {

Tensor2 fuse_cas(const Tensor2& cls, const Tensor2& loc) {
  if (!cls.same_shape(loc)) throw ShapeError("fuse_cas: C_cls and C_loc shapes differ");
  Tensor2 out(cls.rows(), cls.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (cls[i] + loc[i]) / 2.0;
  return out;
}

VideoScores video_scores(const Tensor2& fused, std::size_t labeled_segments, double r_fallback) {
  VideoScores out;
  out.scores = class_scores(fused, labeled_segments, r_fallback);
  out.pmf = ad::softmax(out.scores);
  return out;
}

std::vector<std::size_t> classify_video(const Tensor2& fused, std::size_t labeled_segments, double r_fallback,
                                        double pmf_threshold) {
  const VideoScores vs = video_scores(fused, labeled_segments, r_fallback);
  std::vector<std::size_t> out;
  for (std::size_t n = 0; n < vs.pmf.size(); ++n)
    if (vs.pmf[n] >= pmf_threshold) out.push_back(n);
  return out;
}

std::vector<Proposal> extract_proposals(const Tensor2& fused, std::size_t labeled_segments, double r_fallback,
                                        double score_threshold, double act_threshold) {
  const std::vector<double> s = class_scores(fused, labeled_segments, r_fallback);
  std::vector<Proposal> out;
  const std::size_t l = fused.rows();
  for (std::size_t n = 0; n < fused.cols(); ++n) {
    if (s[n] < score_threshold) continue;
    std::size_t t = 0;
    while (t < l) {
      if (!(fused(t, n) > act_threshold)) {
        ++t;
        continue;
      }
      const std::size_t start = t;
      double total = 0.0;
      while (t < l && fused(t, n) > act_threshold) total += fused(t++, n);
      out.push_back({n, start, t - 1, total / static_cast<double>(t - start)});
    }
  }
  return out;
}

std::vector<Proposal> extract_proposals_relative(const Tensor2& fused, std::span<const std::size_t> classes,
                                                 double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("relative threshold must lie in [0, 1]");
  std::vector<std::size_t> sorted(classes.begin(), classes.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<Proposal> out;
  const std::size_t l = fused.rows();
  for (std::size_t n : sorted) {
    if (n >= fused.cols()) throw std::out_of_range("extract_proposals_relative: class out of range");
    const std::vector<double> col = fused.column(n);
    const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
    if (lo == col.end()) continue;
    const double thr = *lo + fraction * (*hi - *lo);
    std::size_t t = 0;
    while (t < l) {
      if (!(col[t] > thr)) {
        ++t;
        continue;
      }
      const std::size_t start = t;
      double total = 0.0;
      while (t < l && col[t] > thr) total += col[t++];
      out.push_back({n, start, t - 1, total / static_cast<double>(t - start)});
    }
  }
  return out;
}

std::string_view to_string(ThresholdMode mode) {
  return mode == ThresholdMode::kAbsolute ? "absolute" : "relative";
}

ThresholdMode parse_threshold_mode(std::string_view text) {
  if (text == "absolute") return ThresholdMode::kAbsolute;
  if (text == "relative") return ThresholdMode::kRelative;
  throw std::invalid_argument("unknown threshold mode '" + std::string(text) + "' (expected absolute or relative)");
}

double temporal_iou(Interval a, Interval b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.begin, b.begin));
  const double uni = (a.end - a.begin) + (b.end - b.begin) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double average_precision(const std::vector<bool>& ranked_hits, std::size_t positives) {
  if (positives == 0) return 0.0;
  double total = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < ranked_hits.size(); ++rank) {
    if (!ranked_hits[rank]) continue;
    ++hits;
    total += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  return total / static_cast<double>(positives);
}

DetectionResult detection_map(std::span<const VideoDetections> videos, std::span<const double> iou_thresholds,
                              std::size_t num_classes) {
  struct Ranked {
    std::size_t video;
    const Proposal* proposal;
  };
  // Per class: ranked proposals and ground-truth counts.
  std::vector<std::vector<Ranked>> ranked(num_classes);
  std::vector<std::size_t> gt_count(num_classes, 0);
  for (std::size_t v = 0; v < videos.size(); ++v) {
    for (const auto& p : videos[v].proposals) {
      if (p.class_index >= num_classes) throw std::out_of_range("detection_map: proposal class out of range");
      ranked[p.class_index].push_back({v, &p});
    }
    for (const auto& g : videos[v].ground_truth) {
      if (g.class_index >= num_classes) throw std::out_of_range("detection_map: ground-truth class out of range");
      ++gt_count[g.class_index];
    }
  }
  for (auto& list : ranked) {
    std::stable_sort(list.begin(), list.end(), [&](const Ranked& a, const Ranked& b) {
      if (a.proposal->score != b.proposal->score) return a.proposal->score > b.proposal->score;
      const std::string& va = videos[a.video].video_id;
      const std::string& vb = videos[b.video].video_id;
      if (va != vb) return va < vb;
      return a.proposal->start_segment < b.proposal->start_segment;
    });
  }

  DetectionResult result;
  for (double thr : iou_thresholds) {
    std::vector<std::optional<double>> aps(num_classes);
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t n = 0; n < num_classes; ++n) {
      if (gt_count[n] == 0) continue;
      std::vector<std::vector<bool>> used(videos.size());
      for (std::size_t v = 0; v < videos.size(); ++v) used[v].assign(videos[v].ground_truth.size(), false);
      std::vector<bool> hits;
      hits.reserve(ranked[n].size());
      for (const Ranked& r : ranked[n]) {
        const auto& gts = videos[r.video].ground_truth;
        const Interval pi = segment_interval(r.proposal->start_segment, r.proposal->end_segment);
        double best = -1.0;
        std::size_t best_g = gts.size();
        for (std::size_t g = 0; g < gts.size(); ++g) {
          if (gts[g].class_index != n || used[r.video][g]) continue;
          const double iou = temporal_iou(pi, segment_interval(gts[g].start_segment, gts[g].end_segment));
          if (iou >= thr && iou > best) {
            best = iou;
            best_g = g;
          }
        }
        if (best_g < gts.size()) used[r.video][best_g] = true;
        hits.push_back(best_g < gts.size());
      }
      const double ap = average_precision(hits, gt_count[n]);
      aps[n] = ap;
      sum += ap;
      ++counted;
    }
    result.map_at_iou[thr] = counted > 0 ? sum / static_cast<double>(counted) : 0.0;
    result.class_ap[thr] = std::move(aps);
  }
  return result;
}

double classification_map(std::span<const std::vector<double>> scores,
                          std::span<const std::vector<std::uint8_t>> labels) {
  if (scores.empty()) throw std::invalid_argument("classification_map: no videos");
  if (scores.size() != labels.size()) throw std::invalid_argument("classification_map: scores/labels count differ");
  const std::size_t N = scores.front().size();
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t positives = 0;
    for (const auto& y : labels) positives += y.at(n) ? 1 : 0;
    if (positives == 0) continue;
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a].at(n) > scores[b].at(n); });
    std::vector<bool> hits;
    for (std::size_t v : order) hits.push_back(labels[v][n] != 0);
    sum += average_precision(hits, positives);
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("classification_map: no positive labels in any class");
  return sum / static_cast<double>(counted);
}

std::vector<double> default_iou_grid() {
  std::vector<double> grid;
  for (int k = 1; k <= 7; ++k) grid.push_back(k / 10.0);
  return grid;
}

VideoPrediction predict(const Parameters& params, const Video& video, const EvalOptions& options) {
  const CasValues cas = infer(params, video.features.x);
  const std::size_t Q = options.use_label_counts ? video.labels.labeled_segment_count() : 0;
  VideoPrediction out;
  out.video_id = video.features.video_id;
  out.fused = fuse_cas(cas.cls, cas.loc);
  out.scores = video_scores(out.fused, Q, options.r_fallback);
  for (std::size_t n = 0; n < out.scores.pmf.size(); ++n)
    if (out.scores.pmf[n] >= options.pmf_threshold) out.predicted_classes.push_back(n);
  out.proposals = options.threshold_mode == ThresholdMode::kAbsolute
                      ? extract_proposals(out.fused, Q, options.r_fallback, options.score_threshold,
                                          options.act_threshold)
                      : extract_proposals_relative(out.fused, out.predicted_classes, options.relative_threshold);
  return out;
}

EvalReport evaluate(const Parameters& params, const Corpus& corpus, const EvalOptions& options) {
  EvalReport report;
  std::vector<VideoDetections> detections;
  std::vector<std::vector<double>> pmfs;
  std::vector<std::vector<std::uint8_t>> labels;
  for (const Video& v : corpus) {
    VideoPrediction pred = predict(params, v, options);
    detections.push_back({v.features.video_id, pred.proposals, v.instances});
    pmfs.push_back(pred.scores.pmf);
    labels.push_back(v.labels.y);
    report.predictions.push_back(std::move(pred));
  }
  DetectionResult det = detection_map(detections, options.iou_thresholds, params.num_classes());
  report.map_at_iou = std::move(det.map_at_iou);
  report.class_ap = std::move(det.class_ap);
  const bool any_positive = std::any_of(labels.begin(), labels.end(), [](const auto& y) {
    return std::any_of(y.begin(), y.end(), [](auto b) { return b != 0; });
  });
  report.classification_map = any_positive ? classification_map(pmfs, labels) : 0.0;
  return report;
}

namespace {

std::string key(double iou) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", iou);
  return buf;
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  nlohmann::json j;
  nlohmann::json maps = nlohmann::json::object();
  for (const auto& [thr, m] : report.map_at_iou) maps[key(thr)] = m;
  j["map_at_iou"] = maps;
  j["classification_map"] = report.classification_map;
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [thr, aps] : report.class_ap) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& ap : aps) row.push_back(ap ? nlohmann::json(*ap) : nlohmann::json(nullptr));
    per_class[key(thr)] = row;
  }
  j["class_ap"] = per_class;
  j["videos"] = report.predictions.size();
  return j.dump(2);
}

}  // namespace segloc
