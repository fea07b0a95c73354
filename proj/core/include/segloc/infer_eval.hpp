#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segloc/datamodel.hpp"
#include "segloc/model.hpp"
#include "segloc/tensor.hpp"

namespace segloc {

/// A scored temporal detection with inclusive segment bounds.
struct Proposal {
  std::size_t class_index = 0;
  std::size_t start_segment = 0;
  std::size_t end_segment = 0;
  double score = 0.0;

  friend bool operator==(const Proposal&, const Proposal&) = default;
};

/// C_a = (C_cls + C_loc) / 2.
Tensor2 fuse_cas(const Tensor2& cls, const Tensor2& loc);

/// Top-k class scores of C_a and their softmax.
struct VideoScores {
  std::vector<double> scores;
  std::vector<double> pmf;
};
VideoScores video_scores(const Tensor2& fused, std::size_t labeled_segments, double r_fallback);

/// Classes whose PMF reaches `pmf_threshold`.
std::vector<std::size_t> classify_video(const Tensor2& fused, std::size_t labeled_segments, double r_fallback,
                                        double pmf_threshold = 0.1);

/// For classes with top-k score ≥ score_threshold, every maximal run of
/// segments with C_a > act_threshold becomes a proposal scored by the run's
/// mean activation. Output is ordered by class, then start.
std::vector<Proposal> extract_proposals(const Tensor2& fused, std::size_t labeled_segments, double r_fallback,
                                        double score_threshold = 0.0, double act_threshold = 0.0);

/// Relative variant: for each class in `classes`, segments with
/// C_a(t,n) > min + fraction·(max − min) of that class's column form the
/// runs. A constant column yields nothing.
std::vector<Proposal> extract_proposals_relative(const Tensor2& fused, std::span<const std::size_t> classes,
                                                 double fraction);

/// Half-open interval on the segment axis; segment range [s..e] is [s, e+1).
struct Interval {
  double begin = 0.0;
  double end = 0.0;
};

inline Interval segment_interval(std::size_t start, std::size_t end) {
  return {static_cast<double>(start), static_cast<double>(end) + 1.0};
}

double temporal_iou(Interval a, Interval b);

/// Predictions and annotations of one evaluated video.
struct VideoDetections {
  std::string video_id;
  std::vector<Proposal> proposals;
  std::vector<GroundTruthInstance> ground_truth;
};

struct DetectionResult {
  /// IoU threshold → mAP over classes that have ground truth.
  std::map<double, double> map_at_iou;
  /// IoU threshold → per-class AP; classes without ground truth hold nullopt.
  std::map<double, std::vector<std::optional<double>>> class_ap;
};

/// Non-interpolated AP with greedy one-to-one matching in score order. Ties
/// in score are ranked by video_id, then start segment; ties in IoU go to the
/// lower ground-truth index.
DetectionResult detection_map(std::span<const VideoDetections> videos, std::span<const double> iou_thresholds,
                              std::size_t num_classes);

/// AP of a ranked hit list against `positives` ground truths.
double average_precision(const std::vector<bool>& ranked_hits, std::size_t positives);

/// Video-level classification mAP. Rows are videos; columns are classes.
/// Throws if no class has a positive video.
double classification_map(std::span<const std::vector<double>> scores, std::span<const std::vector<std::uint8_t>> labels);

std::vector<double> default_iou_grid();  // 0.1, 0.2, ..., 0.7

enum class ThresholdMode {
  /// Classes with s_a ≥ score_threshold; segments with C_a > act_threshold.
  kAbsolute,
  /// Predicted classes (PMF ≥ pmf_threshold); segments above
  /// relative_threshold of the class's per-video activation range.
  kRelative,
};

std::string_view to_string(ThresholdMode mode);
ThresholdMode parse_threshold_mode(std::string_view text);

struct EvalOptions {
  double r_fallback = 8.0;
  double pmf_threshold = 0.1;
  ThresholdMode threshold_mode = ThresholdMode::kRelative;
  double score_threshold = 0.0;
  double act_threshold = 0.0;
  double relative_threshold = 0.5;
  /// Use the videos' own labeled-segment counts for k. Off by default: at
  /// test time no segment labels are assumed.
  bool use_label_counts = false;
  std::vector<double> iou_thresholds = default_iou_grid();
};

struct VideoPrediction {
  std::string video_id;
  Tensor2 fused;
  VideoScores scores;
  std::vector<std::size_t> predicted_classes;
  std::vector<Proposal> proposals;
};

struct EvalReport {
  std::map<double, double> map_at_iou;
  double classification_map = 0.0;
  std::map<double, std::vector<std::optional<double>>> class_ap;
  std::vector<VideoPrediction> predictions;
};

VideoPrediction predict(const Parameters& params, const Video& video, const EvalOptions& options);
EvalReport evaluate(const Parameters& params, const Corpus& corpus, const EvalOptions& options);

/// JSON text of the report's metrics (predictions are not included).
std::string report_to_json(const EvalReport& report);

}  // namespace segloc
