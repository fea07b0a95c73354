#include "segloc/datamodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "segloc/errors.hpp"
#include "segloc/log.hpp"
#include "segloc/seeds.hpp"

namespace segloc {

namespace fs = std::filesystem;
using nlohmann::json;

std::size_t LabelSet::labeled_segment_count() const {
  std::set<std::size_t> ts;
  for (const auto& s : segments) ts.insert(s.t);
  return ts.size();
}

Tensor2 LabelSet::dense(std::size_t length) const {
  Tensor2 u(length, y.size());
  for (const auto& s : segments) u(s.t, s.n) = 1.0;
  return u;
}

std::string_view to_string(SupervisionMode mode) {
  switch (mode) {
    case SupervisionMode::kVideoOnly: return "video-only";
    case SupervisionMode::kOneSegment: return "one-segment";
    case SupervisionMode::kTwoSegment: return "two-segment";
  }
  return "unknown";
}

SupervisionMode parse_supervision_mode(std::string_view text) {
  if (text == "video-only" || text == "video") return SupervisionMode::kVideoOnly;
  if (text == "one-segment" || text == "one") return SupervisionMode::kOneSegment;
  if (text == "two-segment" || text == "two") return SupervisionMode::kTwoSegment;
  throw std::invalid_argument("unknown supervision mode '" + std::string(text) +
                              "' (expected video-only, one-segment or two-segment)");
}

LabelSet sample_segment_labels(std::span<const GroundTruthInstance> instances, std::size_t num_classes,
                               SupervisionMode mode, std::uint64_t seed) {
  LabelSet labels;
  labels.y.assign(num_classes, 0);
  Rng rng(seed);
  std::set<SegmentLabel> u;
  for (const auto& inst : instances) {
    if (inst.class_index >= num_classes) {
      throw DataError("instance class " + std::to_string(inst.class_index) + " >= N=" +
                      std::to_string(num_classes));
    }
    if (inst.start_segment > inst.end_segment) throw DataError("instance with start > end");
    labels.y[inst.class_index] = 1;

    const std::size_t lo = inst.start_segment;
    const std::size_t hi = inst.end_segment;
    switch (mode) {
      case SupervisionMode::kVideoOnly:
        break;
      case SupervisionMode::kOneSegment: {
        std::uniform_int_distribution<std::size_t> pick(lo, hi);
        u.insert({pick(rng), inst.class_index});
        break;
      }
      case SupervisionMode::kTwoSegment: {
        std::size_t t1 = lo;
        std::size_t t2 = lo;
        if (hi > lo) {
          std::uniform_int_distribution<std::size_t> first(lo, hi);
          t1 = first(rng);
          // Second draw without replacement: skip over t1.
          std::uniform_int_distribution<std::size_t> second(lo, hi - 1);
          t2 = second(rng);
          if (t2 >= t1) ++t2;
          if (t1 > t2) std::swap(t1, t2);
        }
        for (std::size_t t = t1; t <= t2; ++t) u.insert({t, inst.class_index});
        break;
      }
    }
  }
  labels.segments.assign(u.begin(), u.end());
  return labels;
}

SegmentIndex seconds_to_segment(double time_s, double fps, std::size_t frames_per_segment,
                                std::optional<std::size_t> length) {
  if (!(time_s >= 0.0)) throw std::invalid_argument("seconds_to_segment: negative time");
  if (!(fps > 0.0) || frames_per_segment == 0) {
    throw std::invalid_argument("seconds_to_segment: fps and frames_per_segment must be positive");
  }
  const double frame = time_s * fps;
  SegmentIndex out{static_cast<std::size_t>(std::floor(frame / static_cast<double>(frames_per_segment))),
                   false};
  if (length && *length > 0 && out.index >= *length) {
    warn("seconds_to_segment: " + std::to_string(time_s) + "s maps past the last segment; clamped");
    out.index = *length - 1;
    out.clamped = true;
  }
  return out;
}

double annotation_ratio(const AnnotationLog& log) {
  if (!(log.duration_seconds > 0.0)) throw std::invalid_argument("annotation_ratio: duration must be > 0");
  return log.annotation_seconds / log.duration_seconds;
}

double annotation_ratio(std::span<const AnnotationLog> logs) {
  double ta = 0.0;
  double dur = 0.0;
  for (const auto& log : logs) {
    ta += log.annotation_seconds;
    dur += log.duration_seconds;
  }
  if (!(dur > 0.0)) throw std::invalid_argument("annotation_ratio: total duration must be > 0");
  return ta / dur;
}

std::vector<AnnotationLog> read_annotation_logs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotation log " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "video_id,t_a,l_dur") {
    throw DataError(path.string() + ": expected header 'video_id,t_a,l_dur', got '" + line + "'");
  }
  std::vector<AnnotationLog> logs;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, ta, dur;
    if (!std::getline(ss, id, ',') || !std::getline(ss, ta, ',') || !std::getline(ss, dur)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
    }
    AnnotationLog log;
    log.video_id = id;
    try {
      log.annotation_seconds = std::stod(ta);
      log.duration_seconds = std::stod(dur);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": non-numeric field");
    }
    if (!(log.annotation_seconds >= 0.0) || !(log.duration_seconds > 0.0)) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": need t_a >= 0 and l_dur > 0");
    }
    logs.push_back(std::move(log));
  }
  return logs;
}

void validate_video(const Video& v, std::size_t num_classes) {
  const auto fail = [&](const std::string& what) {
    throw DataError("video '" + v.features.video_id + "': " + what);
  };
  const std::size_t l = v.features.length();
  if (l < 1) fail("segment count must be >= 1");
  if (v.features.dim() < 1) fail("feature dimension must be >= 1");
  if (!v.features.x.all_finite()) fail("features contain NaN or Inf");
  if (v.labels.y.size() != num_classes) {
    fail("label vector has " + std::to_string(v.labels.y.size()) + " classes, expected " +
         std::to_string(num_classes));
  }
  for (const auto& s : v.labels.segments) {
    if (s.t >= l) fail("segment label t=" + std::to_string(s.t) + " out of range [0, " + std::to_string(l) + ")");
    if (s.n >= num_classes) fail("segment label class " + std::to_string(s.n) + " out of range");
    if (!v.labels.y[s.n]) fail("segment label class " + std::to_string(s.n) + " missing from video labels");
  }
  for (const auto& inst : v.instances) {
    if (inst.class_index >= num_classes) fail("instance class " + std::to_string(inst.class_index) + " out of range");
    if (inst.start_segment > inst.end_segment || inst.end_segment >= l) {
      fail("instance [" + std::to_string(inst.start_segment) + ", " + std::to_string(inst.end_segment) +
           "] out of range for l=" + std::to_string(l));
    }
  }
}

// ---- files -----------------------------------------------------------------

Tensor2 read_feature_file(const fs::path& path, std::size_t rows, std::size_t cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  const std::size_t count = rows * cols;
  std::vector<std::uint32_t> raw(count);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * 4));
  if (static_cast<std::size_t>(in.gcount()) != count * 4) {
    throw DataError(path.string() + ": expected " + std::to_string(count) + " float32 values (" +
                    std::to_string(rows) + "x" + std::to_string(cols) + "), file is shorter");
  }
  if (in.peek() != std::ifstream::traits_type::eof()) {
    throw DataError(path.string() + ": file longer than " + std::to_string(rows) + "x" +
                    std::to_string(cols) + " float32 values");
  }
  Tensor2 x(rows, cols);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = raw[i];
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    const float v = std::bit_cast<float>(bits);
    if (!std::isfinite(v)) {
      throw DataError(path.string() + ": non-finite value at row " + std::to_string(i / cols) + ", col " +
                      std::to_string(i % cols));
    }
    x[i] = static_cast<double>(v);
  }
  return x;
}

void write_feature_file(const fs::path& path, const Tensor2& x) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write feature file " + path.string());
  std::vector<std::uint32_t> raw(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(x[i]));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    raw[i] = bits;
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
}

namespace {

std::size_t get_count(const json& rec, const char* key, const std::string& where) {
  if (!rec.contains(key)) throw DataError(where + ": missing field '" + key + "'");
  const json& v = rec.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw DataError(where + ": field '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

json video_to_json(const Video& v, const std::string& feature_file) {
  json rec;
  rec["video_id"] = v.features.video_id;
  rec["feature_file"] = feature_file;
  rec["l"] = v.features.length();
  rec["D"] = v.features.dim();
  rec["fps"] = v.features.fps;
  rec["frames_per_segment"] = v.features.frames_per_segment;
  json video_labels = json::array();
  for (std::size_t n = 0; n < v.labels.y.size(); ++n)
    if (v.labels.y[n]) video_labels.push_back(n);
  json segs = json::array();
  for (const auto& s : v.labels.segments) segs.push_back({{"t", s.t}, {"n", s.n}});
  rec["labels"] = {{"video", video_labels}, {"segments", segs}};
  json insts = json::array();
  for (const auto& i : v.instances) insts.push_back({{"n", i.class_index}, {"start", i.start_segment}, {"end", i.end_segment}});
  rec["instances"] = insts;
  return rec;
}

void write_json_file(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace

LoadedCorpus ingest_corpus(const fs::path& manifest_path, std::optional<std::size_t> num_classes) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw DataError(manifest_path.string() + ": invalid JSON: " + e.what());
  }
  if (!doc.is_array()) throw DataError(manifest_path.string() + ": manifest must be a JSON array");
  const fs::path base = fs::absolute(manifest_path).parent_path();

  struct Pending {
    Video video;
    std::vector<std::size_t> video_classes;
    std::vector<SegmentLabel> segments;
  };
  std::vector<Pending> pending;
  LoadedCorpus corpus;
  std::size_t max_class_plus_one = 0;

  for (std::size_t r = 0; r < doc.size(); ++r) {
    const json& rec = doc[r];
    std::string where = manifest_path.string() + " record " + std::to_string(r);
    if (!rec.is_object()) throw DataError(where + ": not an object");
    Pending p;
    try {
      p.video.features.video_id = rec.at("video_id").get<std::string>();
      where += " (video_id=" + p.video.features.video_id + ")";
      const std::size_t l = get_count(rec, "l", where);
      const std::size_t D = get_count(rec, "D", where);
      if (l < 1 || D < 1) throw DataError(where + ": l and D must be >= 1");
      if (rec.contains("fps")) p.video.features.fps = rec.at("fps").get<double>();
      if (rec.contains("frames_per_segment")) p.video.features.frames_per_segment = get_count(rec, "frames_per_segment", where);
      fs::path feature = rec.at("feature_file").get<std::string>();
      if (feature.is_relative()) feature = base / feature;
      try {
        p.video.features.x = read_feature_file(feature, l, D);
      } catch (const DataError& e) {
        throw DataError(where + ": " + e.what());
      }
      corpus.feature_files.push_back(feature.lexically_normal());

      if (rec.contains("labels")) {
        const json& labels = rec.at("labels");
        if (labels.contains("video")) {
          for (const auto& n : labels.at("video")) p.video_classes.push_back(n.get<std::size_t>());
        }
        if (labels.contains("segments")) {
          for (const auto& s : labels.at("segments")) {
            SegmentLabel sl{s.at("t").get<std::size_t>(), s.at("n").get<std::size_t>()};
            if (sl.t >= l) {
              throw DataError(where + ": segment label t=" + std::to_string(sl.t) + " out of range for l=" +
                              std::to_string(l));
            }
            p.segments.push_back(sl);
          }
        }
      }
      if (rec.contains("instances")) {
        for (const auto& i : rec.at("instances")) {
          GroundTruthInstance gt{i.at("n").get<std::size_t>(), i.at("start").get<std::size_t>(),
                                 i.at("end").get<std::size_t>()};
          if (gt.start_segment > gt.end_segment || gt.end_segment >= l) {
            throw DataError(where + ": instance [" + std::to_string(gt.start_segment) + ", " +
                            std::to_string(gt.end_segment) + "] out of range for l=" + std::to_string(l));
          }
          p.video.instances.push_back(gt);
        }
      }
    } catch (const json::exception& e) {
      throw DataError(where + ": " + e.what());
    }
    for (std::size_t n : p.video_classes) max_class_plus_one = std::max(max_class_plus_one, n + 1);
    for (const auto& s : p.segments) max_class_plus_one = std::max(max_class_plus_one, s.n + 1);
    for (const auto& i : p.video.instances) max_class_plus_one = std::max(max_class_plus_one, i.class_index + 1);
    pending.push_back(std::move(p));
  }

  corpus.num_classes = num_classes.value_or(max_class_plus_one);
  if (num_classes && max_class_plus_one > *num_classes) {
    throw DataError(manifest_path.string() + ": class index " + std::to_string(max_class_plus_one - 1) +
                    " out of range for N=" + std::to_string(*num_classes));
  }
  for (auto& p : pending) {
    Video& v = p.video;
    v.labels.y.assign(corpus.num_classes, 0);
    for (std::size_t n : p.video_classes) v.labels.y[n] = 1;
    std::set<SegmentLabel> u(p.segments.begin(), p.segments.end());
    v.labels.segments.assign(u.begin(), u.end());
    validate_video(v, corpus.num_classes);
    corpus.videos.push_back(std::move(v));
  }
  return corpus;
}

void write_corpus(const fs::path& manifest_path, const Corpus& corpus, const std::string& feature_subdir) {
  const fs::path base = manifest_path.has_parent_path() ? manifest_path.parent_path() : fs::path(".");
  fs::create_directories(base / feature_subdir);
  json doc = json::array();
  for (const auto& v : corpus) {
    const std::string rel = (fs::path(feature_subdir) / (v.features.video_id + ".f32")).generic_string();
    write_feature_file(base / rel, v.features.x);
    doc.push_back(video_to_json(v, rel));
  }
  write_json_file(manifest_path, doc);
}

void write_manifest(const fs::path& manifest_path, const Corpus& corpus,
                    std::span<const fs::path> feature_files) {
  if (feature_files.size() != corpus.size()) throw std::invalid_argument("write_manifest: one feature file per video");
  const fs::path base = fs::absolute(manifest_path).parent_path();
  json doc = json::array();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const fs::path rel = fs::absolute(feature_files[i]).lexically_relative(base);
    doc.push_back(video_to_json(corpus[i], rel.empty() ? feature_files[i].generic_string() : rel.generic_string()));
  }
  write_json_file(manifest_path, doc);
}

void relabel_corpus(Corpus& corpus, std::size_t num_classes, SupervisionMode mode, std::uint64_t seed) {
  for (auto& v : corpus) {
    if (v.instances.empty()) {
      // Nothing to sample from; keep whatever video-level labels exist.
      v.labels.y.resize(num_classes, 0);
      v.labels.segments.clear();
      continue;
    }
    v.labels = sample_segment_labels(v.instances, num_classes, mode, derive_seed(seed, v.features.video_id));
  }
}

}  // namespace segloc
