#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "segloc/datamodel.hpp"
#include "segloc/tensor.hpp"

namespace segloc {

/// Planted-instance corpus generator.
///
/// Every segment is prototype + N(0, σ²) noise. Background segments use a
/// shared background direction. Action segments of class n use a shared
/// "action" direction plus a weaker class direction; a centered sub-span of
/// each instance (the discriminative part) additionally carries a
/// class-unique direction. All directions are orthonormal when
/// 2N + 2 ≤ D and are scaled by `separation`.
struct SynthConfig {
  std::size_t num_videos = 60;
  std::size_t num_test_videos = 20;
  std::size_t num_classes = 4;
  std::size_t feature_dim = 32;
  std::size_t min_length = 40;
  std::size_t max_length = 80;
  std::size_t min_instances = 1;
  std::size_t max_instances = 3;
  std::size_t min_instance_length = 8;
  std::size_t max_instance_length = 20;
  std::size_t min_gap = 2;
  double discriminative_fraction = 0.3;
  double separation = 3.0;
  double noise_sigma = 1.0;
  /// Weight of the class direction relative to the shared action direction.
  double class_specificity = 0.5;
  SupervisionMode supervision = SupervisionMode::kOneSegment;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Planted directions, kept so tests can check geometry.
struct SynthPrototypes {
  Tensor2 background;      // 1×D
  Tensor2 action;          // 1×D
  Tensor2 class_dirs;      // N×D
  Tensor2 discriminative;  // N×D
};

/// Per-video discriminative sub-spans, aligned with Video::instances.
struct PlantedSpans {
  std::vector<std::pair<std::size_t, std::size_t>> discriminative;
};

struct SynthCorpus {
  Corpus train;
  Corpus test;
  std::vector<PlantedSpans> train_spans;
  std::vector<PlantedSpans> test_spans;
  SynthPrototypes prototypes;
};

SynthCorpus generate(const SynthConfig& config);

/// Inclusive sub-span of length ceil(fraction·span), centered in the instance.
std::pair<std::size_t, std::size_t> discriminative_span(const GroundTruthInstance& instance, double fraction);

struct CorpusStats {
  std::size_t videos = 0;
  std::size_t total_segments = 0;
  std::size_t instances = 0;
  std::vector<std::size_t> class_instance_counts;
  double mean_instance_length = 0.0;
  /// Σ instance spans / Σ l.
  double instance_coverage = 0.0;
  /// Σ labeled segments / Σ l.
  double labeled_coverage = 0.0;
};

CorpusStats corpus_stats(const Corpus& corpus, std::size_t num_classes);

}  // namespace segloc
