#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "segloc/tensor.hpp"

namespace segloc {

/// One video's per-segment features (l×D).
struct FeatureSequence {
  std::string video_id;
  Tensor2 x;
  double fps = 30.0;
  std::size_t frames_per_segment = 16;

  std::size_t length() const noexcept { return x.rows(); }
  std::size_t dim() const noexcept { return x.cols(); }
};

/// An action instance with inclusive segment bounds.
struct GroundTruthInstance {
  std::size_t class_index = 0;
  std::size_t start_segment = 0;
  std::size_t end_segment = 0;

  std::size_t span() const noexcept { return end_segment - start_segment + 1; }
  friend bool operator==(const GroundTruthInstance&, const GroundTruthInstance&) = default;
};

struct SegmentLabel {
  std::size_t t = 0;
  std::size_t n = 0;
  friend auto operator<=>(const SegmentLabel&, const SegmentLabel&) = default;
};

/// Video-level multi-hot labels plus sparse segment labels.
/// `segments` is kept sorted and duplicate-free.
struct LabelSet {
  std::vector<std::uint8_t> y;
  std::vector<SegmentLabel> segments;

  std::size_t num_classes() const noexcept { return y.size(); }
  /// Number of distinct labeled segment indices.
  std::size_t labeled_segment_count() const;
  bool has_class(std::size_t n) const { return n < y.size() && y[n] != 0; }
  /// Dense l×N indicator of `segments`.
  Tensor2 dense(std::size_t length) const;

  friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

struct Video {
  FeatureSequence features;
  LabelSet labels;
  std::vector<GroundTruthInstance> instances;
};

using Corpus = std::vector<Video>;

enum class SupervisionMode { kVideoOnly, kOneSegment, kTwoSegment };

std::string_view to_string(SupervisionMode mode);
SupervisionMode parse_supervision_mode(std::string_view text);

/// Simulates segment-level annotation by sampling inside boundary
/// annotations. One-segment labels a single uniform segment per instance;
/// two-segment draws two distinct segments and labels the inclusive span
/// between them. Video-only leaves `segments` empty. y is the set of
/// instance classes either way.
LabelSet sample_segment_labels(std::span<const GroundTruthInstance> instances, std::size_t num_classes,
                               SupervisionMode mode, std::uint64_t seed);

struct SegmentIndex {
  std::size_t index = 0;
  bool clamped = false;
};

/// floor(time_s·fps / frames_per_segment), clamped to length−1 when a
/// length is given (with a warning).
SegmentIndex seconds_to_segment(double time_s, double fps, std::size_t frames_per_segment,
                                std::optional<std::size_t> length = std::nullopt);

struct AnnotationLog {
  std::string video_id;
  double annotation_seconds = 0.0;
  double duration_seconds = 0.0;
};

/// φ = t_a / l for one video.
double annotation_ratio(const AnnotationLog& log);
/// Σ t_a / Σ l over a corpus (duration-weighted).
double annotation_ratio(std::span<const AnnotationLog> logs);

/// CSV with header `video_id,t_a,l_dur`.
std::vector<AnnotationLog> read_annotation_logs(const std::filesystem::path& path);

/// Checks every FeatureSequence/LabelSet/instance invariant; throws DataError
/// naming the record on the first violation.
void validate_video(const Video& video, std::size_t num_classes);

// ---- files -----------------------------------------------------------------

/// Little-endian float32, row-major, exactly rows×cols values, no header.
Tensor2 read_feature_file(const std::filesystem::path& path, std::size_t rows, std::size_t cols);
void write_feature_file(const std::filesystem::path& path, const Tensor2& x);

struct LoadedCorpus {
  Corpus videos;
  std::size_t num_classes = 0;
  /// Absolute feature path per video, in manifest order.
  std::vector<std::filesystem::path> feature_files;
};

/// Loads a JSON manifest. Feature paths are resolved relative to the
/// manifest's directory. When `num_classes` is not given it is inferred as
/// one past the largest class index referenced.
LoadedCorpus ingest_corpus(const std::filesystem::path& manifest_path,
                           std::optional<std::size_t> num_classes = std::nullopt);

/// Writes one feature file per video under `<manifest dir>/<feature_subdir>/`
/// and the manifest itself.
void write_corpus(const std::filesystem::path& manifest_path, const Corpus& corpus,
                  const std::string& feature_subdir = "features");

/// Writes only the manifest, pointing at existing feature files. Paths are
/// stored relative to the manifest's directory.
void write_manifest(const std::filesystem::path& manifest_path, const Corpus& corpus,
                    std::span<const std::filesystem::path> feature_files);

/// Re-samples segment labels for every video from its instances.
void relabel_corpus(Corpus& corpus, std::size_t num_classes, SupervisionMode mode, std::uint64_t seed);

}  // namespace segloc
