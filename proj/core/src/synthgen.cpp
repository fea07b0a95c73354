#include "segloc/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "segloc/seeds.hpp"

namespace segloc {

void SynthConfig::validate() const {
  if (num_classes < 1 || feature_dim < 1) throw std::invalid_argument("synth: N and D must be >= 1");
  if (min_length < 1 || min_length > max_length) throw std::invalid_argument("synth: bad length range");
  if (min_instances > max_instances) throw std::invalid_argument("synth: bad instance count range");
  if (min_instance_length < 1 || min_instance_length > max_instance_length) {
    throw std::invalid_argument("synth: bad instance length range");
  }
  if (max_instances > 0 && min_instance_length > min_length) {
    throw std::invalid_argument("synth: instances cannot fit the shortest video");
  }
  if (!(discriminative_fraction > 0.0 && discriminative_fraction <= 1.0)) {
    throw std::invalid_argument("synth: discriminative_fraction must be in (0, 1]");
  }
  if (!(separation > 0.0)) throw std::invalid_argument("synth: separation must be > 0");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("synth: noise_sigma must be >= 0");
  if (!(class_specificity >= 0.0)) throw std::invalid_argument("synth: class_specificity must be >= 0");
}

std::pair<std::size_t, std::size_t> discriminative_span(const GroundTruthInstance& inst, double fraction) {
  const std::size_t span = inst.span();
  std::size_t len = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(span) - 1e-12));
  len = std::clamp<std::size_t>(len, 1, span);
  const std::size_t start = inst.start_segment + (span - len) / 2;
  return {start, start + len - 1};
}

namespace {

SynthPrototypes make_prototypes(const SynthConfig& c, Rng& rng) {
  const std::size_t D = c.feature_dim;
  const std::size_t N = c.num_classes;
  const std::size_t count = 2 + 2 * N;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> dirs;
  const bool orthogonal = count <= D;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> v(D);
    double norm = 0.0;
    do {
      for (double& x : v) x = normal(rng);
      if (orthogonal) {
        for (const auto& u : dirs) {
          const double proj = dot(v, u);
          for (std::size_t d = 0; d < D; ++d) v[d] -= proj * u[d];
        }
      }
      norm = l2_norm(v);
    } while (norm < 1e-6);
    for (double& x : v) x /= norm;
    dirs.push_back(std::move(v));
  }
  SynthPrototypes p;
  p.background = Tensor2::row_vector(dirs[0]);
  p.action = Tensor2::row_vector(dirs[1]);
  p.class_dirs = Tensor2(N, D);
  p.discriminative = Tensor2(N, D);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t d = 0; d < D; ++d) {
      p.class_dirs(n, d) = dirs[2 + n][d];
      p.discriminative(n, d) = dirs[2 + N + n][d];
    }
  }
  return p;
}

std::vector<GroundTruthInstance> place_instances(const SynthConfig& c, std::size_t length, Rng& rng) {
  std::uniform_int_distribution<std::size_t> count_dist(c.min_instances, c.max_instances);
  std::size_t count = count_dist(rng);
  std::uniform_int_distribution<std::size_t> len_dist(c.min_instance_length, c.max_instance_length);
  std::vector<std::size_t> lens(count);
  for (auto& len : lens) len = len_dist(rng);
  // Drop instances until they fit with the required gaps.
  const auto needed = [&] {
    std::size_t total = 0;
    for (auto len : lens) total += len;
    return total + (lens.empty() ? 0 : (lens.size() - 1) * c.min_gap);
  };
  while (!lens.empty() && needed() > length) lens.pop_back();
  if (lens.empty()) return {};

  // Split the slack into lens.size()+1 free stretches.
  const std::size_t slack = length - needed();
  std::uniform_int_distribution<std::size_t> cut_dist(0, slack);
  std::vector<std::size_t> cuts(lens.size());
  for (auto& cut : cuts) cut = cut_dist(rng);
  std::sort(cuts.begin(), cuts.end());

  std::uniform_int_distribution<std::size_t> class_dist(0, c.num_classes - 1);
  std::vector<GroundTruthInstance> out;
  std::size_t cursor = 0;
  std::size_t prev_cut = 0;
  for (std::size_t i = 0; i < lens.size(); ++i) {
    cursor += cuts[i] - prev_cut;
    prev_cut = cuts[i];
    out.push_back({class_dist(rng), cursor, cursor + lens[i] - 1});
    cursor += lens[i] + c.min_gap;
  }
  return out;
}

Video make_video(const SynthConfig& c, const SynthPrototypes& proto, std::string video_id, std::uint64_t seed,
                 PlantedSpans& spans) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> length_dist(c.min_length, c.max_length);
  const std::size_t l = length_dist(rng);
  const std::size_t D = c.feature_dim;

  Video v;
  v.features.video_id = std::move(video_id);
  v.instances = place_instances(c, l, rng);

  // Row prototypes: background unless overwritten by an instance.
  Tensor2 x(l, D);
  for (std::size_t t = 0; t < l; ++t)
    for (std::size_t d = 0; d < D; ++d) x(t, d) = c.separation * proto.background(0, d);
  for (const auto& inst : v.instances) {
    const auto disc = discriminative_span(inst, c.discriminative_fraction);
    spans.discriminative.push_back(disc);
    for (std::size_t t = inst.start_segment; t <= inst.end_segment; ++t) {
      const bool is_disc = t >= disc.first && t <= disc.second;
      for (std::size_t d = 0; d < D; ++d) {
        double value = proto.action(0, d) + c.class_specificity * proto.class_dirs(inst.class_index, d);
        if (is_disc) value += proto.discriminative(inst.class_index, d);
        x(t, d) = c.separation * value;
      }
    }
  }
  if (c.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, c.noise_sigma);
    for (double& value : x.data()) value += noise(rng);
  }
  // Round-trip through float32 so in-memory and on-disk corpora agree.
  for (double& value : x.data()) value = static_cast<double>(static_cast<float>(value));
  v.features.x = std::move(x);
  return v;
}

std::string video_name(const char* split, std::size_t index) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "synth_%s_%04zu", split, index);
  return buf;
}

}  // namespace

SynthCorpus generate(const SynthConfig& c) {
  c.validate();
  SynthCorpus out;
  Rng proto_rng(derive_seed(c.seed, "prototypes"));
  out.prototypes = make_prototypes(c, proto_rng);

  const std::uint64_t video_root = derive_seed(c.seed, "videos");
  const std::uint64_t label_root = derive_seed(c.seed, "labels");
  const auto build = [&](const char* split, std::size_t count, std::size_t offset, Corpus& corpus,
                         std::vector<PlantedSpans>& spans) {
    for (std::size_t i = 0; i < count; ++i) {
      PlantedSpans planted;
      Video v = make_video(c, out.prototypes, video_name(split, i), derive_seed(video_root, offset + i), planted);
      v.labels = sample_segment_labels(v.instances, c.num_classes, c.supervision,
                                       derive_seed(label_root, v.features.video_id));
      corpus.push_back(std::move(v));
      spans.push_back(std::move(planted));
    }
  };
  build("train", c.num_videos, 0, out.train, out.train_spans);
  build("test", c.num_test_videos, c.num_videos, out.test, out.test_spans);
  return out;
}

CorpusStats corpus_stats(const Corpus& corpus, std::size_t num_classes) {
  CorpusStats s;
  s.class_instance_counts.assign(num_classes, 0);
  std::size_t instance_segments = 0;
  std::size_t labeled = 0;
  for (const Video& v : corpus) {
    ++s.videos;
    s.total_segments += v.features.length();
    labeled += v.labels.labeled_segment_count();
    for (const auto& inst : v.instances) {
      ++s.instances;
      instance_segments += inst.span();
      if (inst.class_index < num_classes) ++s.class_instance_counts[inst.class_index];
    }
  }
  if (s.instances > 0) s.mean_instance_length = static_cast<double>(instance_segments) / static_cast<double>(s.instances);
  if (s.total_segments > 0) {
    s.instance_coverage = static_cast<double>(instance_segments) / static_cast<double>(s.total_segments);
    s.labeled_coverage = static_cast<double>(labeled) / static_cast<double>(s.total_segments);
  }
  return s;
}

}  // namespace segloc
