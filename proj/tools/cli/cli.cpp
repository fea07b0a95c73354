#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <ostream>
#include <sstream>

#include "experiment.hpp"
#include "segloc/checkpoint.hpp"
#include "segloc/errors.hpp"
#include "segloc/synthgen.hpp"

namespace segloc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Kind { kString, kPath, kReal, kCount, kBool, kGrid };

struct KeySpec {
  std::string name;
  Kind kind;
  json fallback;
  std::string help;
};

std::string flag_name(const std::string& key) {
  std::string out = "--" + key;
  std::replace(out.begin(), out.end(), '_', '-');
  return out;
}

std::vector<KeySpec> common_keys() {
  return {{"seed", Kind::kCount, 0, "root seed"}, {"out", Kind::kPath, "", "output directory"}};
}

std::vector<KeySpec> train_keys() {
  const TrainConfig t;
  const LossWeights w;
  return {
      {"lr", Kind::kReal, t.learning_rate, "learning rate"},
      {"batch_size", Kind::kCount, t.batch_size, "videos per update"},
      {"max_steps", Kind::kCount, t.max_steps, "number of updates"},
      {"dropout", Kind::kReal, t.dropout_rate, "dropout rate on the embedding"},
      {"threads", Kind::kCount, t.num_threads, "worker threads per batch"},
      {"checkpoint_every", Kind::kCount, t.checkpoint_every, "periodic checkpoint interval (0 = off)"},
      {"alpha", Kind::kReal, w.alpha, "partial segment loss weight"},
      {"beta", Kind::kReal, w.beta, "sphere loss weight"},
      {"gamma", Kind::kReal, w.gamma, "propagation loss weight"},
      {"margin_m", Kind::kCount, w.margin_m, "angular margin m"},
      {"psi_literal", Kind::kBool, false, "use the constant-offset margin function"},
      {"similarity_mode", Kind::kString, std::string(to_string(w.similarity_mode)),
       "literal or normalized-clamped"},
      {"l2_segment", Kind::kBool, false, "replace the partial segment loss with the l2 baseline"},
      {"r_fallback", Kind::kReal, w.r_fallback, "top-k ratio when a video has no segment labels"},
  };
}

std::vector<KeySpec> eval_keys() {
  const EvalOptions e;
  return {
      {"iou_grid", Kind::kGrid, "0.1:0.1:0.7", "IoU thresholds, comma list or start:step:stop"},
      {"pmf_threshold", Kind::kReal, e.pmf_threshold, "class kept when its probability reaches this"},
      {"threshold_mode", Kind::kString, std::string(to_string(e.threshold_mode)),
       "proposal thresholding: relative (per-class range) or absolute"},
      {"relative_threshold", Kind::kReal, e.relative_threshold, "fraction of the activation range (relative mode)"},
      {"score_threshold", Kind::kReal, e.score_threshold, "class kept when its score reaches this (absolute mode)"},
      {"act_threshold", Kind::kReal, e.act_threshold, "activation threshold (absolute mode)"},
      {"use_label_counts", Kind::kBool, false, "use segment-label counts for top-k at test time"},
  };
}

template <class... Lists>
std::vector<KeySpec> join(Lists&&... lists) {
  std::vector<KeySpec> out;
  (out.insert(out.end(), lists.begin(), lists.end()), ...);
  return out;
}

std::vector<KeySpec> keys_for(const std::string& command) {
  if (command == "synth") {
    const SynthConfig s;
    return join(common_keys(),
                std::vector<KeySpec>{
                    {"num_videos", Kind::kCount, s.num_videos, "training videos"},
                    {"num_test_videos", Kind::kCount, s.num_test_videos, "held-out videos"},
                    {"num_classes", Kind::kCount, s.num_classes, "action classes"},
                    {"feature_dim", Kind::kCount, s.feature_dim, "feature dimension"},
                    {"min_length", Kind::kCount, s.min_length, "shortest video (segments)"},
                    {"max_length", Kind::kCount, s.max_length, "longest video (segments)"},
                    {"min_instances", Kind::kCount, s.min_instances, "fewest instances per video"},
                    {"max_instances", Kind::kCount, s.max_instances, "most instances per video"},
                    {"discriminative_fraction", Kind::kReal, s.discriminative_fraction,
                     "share of each instance carrying the class-unique direction"},
                    {"separation", Kind::kReal, s.separation, "prototype scale"},
                    {"noise_sigma", Kind::kReal, s.noise_sigma, "feature noise"},
                    {"class_specificity", Kind::kReal, s.class_specificity, "class direction weight"},
                    {"supervision", Kind::kString, "one-segment", "segment labels to sample"},
                });
  }
  if (command == "labelgen") {
    return join(common_keys(), std::vector<KeySpec>{
                                   {"manifest", Kind::kPath, "", "corpus manifest with instances"},
                                   {"num_classes", Kind::kCount, 0, "classes (0 = infer)"},
                                   {"supervision", Kind::kString, "one-segment", "segment labels to sample"},
                                   {"annotations", Kind::kPath, "", "annotation-time CSV (video_id,t_a,l_dur)"},
                               });
  }
  if (command == "train") {
    return join(common_keys(),
                std::vector<KeySpec>{
                    {"manifest", Kind::kPath, "", "training manifest"},
                    {"num_classes", Kind::kCount, 0, "classes (0 = infer)"},
                    {"supervision", Kind::kString, "", "resample segment labels (empty = keep manifest labels)"},
                },
                train_keys());
  }
  if (command == "eval") {
    return join(common_keys(),
                std::vector<KeySpec>{
                    {"manifest", Kind::kPath, "", "evaluation manifest"},
                    {"checkpoint", Kind::kPath, "", "trained checkpoint"},
                    {"num_classes", Kind::kCount, 0, "classes (0 = from checkpoint)"},
                    {"r_fallback", Kind::kReal, EvalOptions{}.r_fallback, "top-k ratio without segment labels"},
                    {"skip_cas", Kind::kBool, false, "do not write per-video CAS tables"},
                },
                eval_keys());
  }
  if (command == "gradcheck") {
    return join(common_keys(), std::vector<KeySpec>{
                                   {"instances", Kind::kCount, 20, "random problems per loss"},
                                   {"epsilon", Kind::kReal, 1e-6, "finite-difference step"},
                                   {"tolerance", Kind::kReal, 1e-5, "largest accepted relative error"},
                               });
  }
  if (command == "ablation") {
    std::string grid;
    for (const LossCombo& c : full_grid()) grid += (grid.empty() ? "" : ",") + c.name();
    return join(common_keys(),
                std::vector<KeySpec>{
                    {"manifest", Kind::kPath, "", "training manifest (with instances)"},
                    {"test_manifest", Kind::kPath, "", "evaluation manifest (default: the training manifest)"},
                    {"synth", Kind::kBool, false, "generate the default synthetic corpus for each seed"},
                    {"num_classes", Kind::kCount, 0, "classes (0 = infer)"},
                    {"modes", Kind::kString, grid, "comma list of loss combinations"},
                    {"supervision", Kind::kString, "one-segment", "comma list of supervision modes"},
                    {"seeds", Kind::kCount, 1, "runs per cell, seeded seed, seed+1, ..."},
                    {"jobs", Kind::kCount, 1, "cells trained concurrently"},
                },
                train_keys(), eval_keys());
  }
  return {};
}

// ---- value conversion --------------------------------------------------------

double to_real(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty() || !std::isfinite(v))
    throw UsageError(flag_name(key) + ": expected a number, got '" + text + "'");
  return v;
}

std::uint64_t to_count(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    if (!text.empty() && text[0] != '-') v = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty())
    throw UsageError(flag_name(key) + ": expected a non-negative integer, got '" + text + "'");
  return v;
}

json grid_json(const std::string& key, const json& value) {
  std::vector<double> grid;
  if (value.is_string()) {
    grid = parse_iou_grid(value.get<std::string>());
  } else if (value.is_array()) {
    for (const json& v : value) {
      if (!v.is_number()) throw UsageError(key + ": grid entries must be numbers");
      grid.push_back(v.get<double>());
    }
    std::ostringstream joined;
    for (std::size_t i = 0; i < grid.size(); ++i) joined << (i ? "," : "") << grid[i];
    grid = parse_iou_grid(joined.str());
  } else {
    throw UsageError(key + ": expected a string or an array");
  }
  return grid;
}

// Checks and normalizes a value coming from the config file.
json coerce(const KeySpec& spec, const json& value) {
  switch (spec.kind) {
    case Kind::kString:
    case Kind::kPath:
      if (!value.is_string()) throw UsageError("config key '" + spec.name + "' must be a string");
      return value;
    case Kind::kReal:
      if (!value.is_number()) throw UsageError("config key '" + spec.name + "' must be a number");
      return value.get<double>();
    case Kind::kCount:
      if (!value.is_number_unsigned() && !(value.is_number_integer() && value.get<long long>() >= 0))
        throw UsageError("config key '" + spec.name + "' must be a non-negative integer");
      return value.get<std::uint64_t>();
    case Kind::kBool:
      if (!value.is_boolean()) throw UsageError("config key '" + spec.name + "' must be true or false");
      return value;
    case Kind::kGrid:
      return grid_json(spec.name, value);
  }
  return value;
}

json from_flag(const KeySpec& spec, const std::string& text) {
  switch (spec.kind) {
    case Kind::kString:
    case Kind::kPath: return text;
    case Kind::kReal: return to_real(spec.name, text);
    case Kind::kCount: return to_count(spec.name, text);
    case Kind::kBool: return true;
    case Kind::kGrid: return grid_json(spec.name, text);
  }
  return text;
}

// ---- resolved config access -----------------------------------------------------

struct Config {
  std::string command;
  json values;

  std::string str(const std::string& key) const { return values.at(key).get<std::string>(); }
  double real(const std::string& key) const { return values.at(key).get<double>(); }
  std::uint64_t count(const std::string& key) const { return values.at(key).get<std::uint64_t>(); }
  bool flag(const std::string& key) const { return values.at(key).get<bool>(); }
  fs::path path(const std::string& key) const { return values.at(key).get<std::string>(); }

  fs::path required_out() const {
    const fs::path out = path("out");
    if (out.empty()) throw UsageError("--out is required for " + command);
    return out;
  }
  fs::path existing(const std::string& key) const {
    const fs::path p = path(key);
    if (p.empty()) throw UsageError(flag_name(key) + " is required for " + command);
    if (!fs::exists(p)) throw UsageError(flag_name(key) + ": no such file: " + p.string());
    return p;
  }
  std::optional<std::size_t> num_classes() const {
    const std::uint64_t n = count("num_classes");
    return n == 0 ? std::nullopt : std::optional<std::size_t>(n);
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_run_config(const fs::path& dir, const Config& config) {
  json doc = config.values;
  doc["command"] = config.command;
  write_text(dir / "run_config.json", doc.dump(2) + "\n");
}

SupervisionMode supervision(const std::string& text) {
  try {
    return parse_supervision_mode(text);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

LossWeights loss_weights(const Config& c) {
  LossWeights w;
  w.alpha = c.real("alpha");
  w.beta = c.real("beta");
  w.gamma = c.real("gamma");
  w.r_fallback = c.real("r_fallback");
  w.margin_m = static_cast<int>(c.count("margin_m"));
  w.psi_form = c.flag("psi_literal") ? ad::PsiForm::kLiteral : ad::PsiForm::kStandard;
  try {
    w.similarity_mode = parse_similarity_mode(c.str("similarity_mode"));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  w.segment_loss = c.flag("l2_segment") ? SegmentLoss::kL2 : SegmentLoss::kPartial;
  try {
    w.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return w;
}

TrainConfig train_config(const Config& c) {
  TrainConfig t;
  t.learning_rate = c.real("lr");
  t.batch_size = c.count("batch_size");
  t.max_steps = c.count("max_steps");
  t.dropout_rate = c.real("dropout");
  t.num_threads = c.count("threads");
  t.checkpoint_every = c.count("checkpoint_every");
  t.loss_weights = loss_weights(c);
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return t;
}

EvalOptions eval_options(const Config& c) {
  EvalOptions e;
  e.r_fallback = c.real("r_fallback");
  e.pmf_threshold = c.real("pmf_threshold");
  e.score_threshold = c.real("score_threshold");
  e.act_threshold = c.real("act_threshold");
  e.relative_threshold = c.real("relative_threshold");
  if (!(e.relative_threshold >= 0.0 && e.relative_threshold <= 1.0))
    throw UsageError("--relative-threshold must lie in [0, 1]");
  try {
    e.threshold_mode = parse_threshold_mode(c.str("threshold_mode"));
  } catch (const std::invalid_argument& ex) {
    throw UsageError(ex.what());
  }
  e.use_label_counts = c.flag("use_label_counts");
  e.iou_thresholds = c.values.at("iou_grid").get<std::vector<double>>();
  return e;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string grid_label(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "map@%g", t);
  return buf;
}

// ---- commands -------------------------------------------------------------------------

int cmd_synth(const Config& c, std::ostream& out) {
  SynthConfig s;
  s.num_videos = c.count("num_videos");
  s.num_test_videos = c.count("num_test_videos");
  s.num_classes = c.count("num_classes");
  s.feature_dim = c.count("feature_dim");
  s.min_length = c.count("min_length");
  s.max_length = c.count("max_length");
  s.min_instances = c.count("min_instances");
  s.max_instances = c.count("max_instances");
  s.discriminative_fraction = c.real("discriminative_fraction");
  s.separation = c.real("separation");
  s.noise_sigma = c.real("noise_sigma");
  s.class_specificity = c.real("class_specificity");
  s.supervision = supervision(c.str("supervision"));
  s.seed = c.count("seed");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const fs::path dir = c.required_out();
  fs::create_directories(dir);
  const SynthCorpus corpus = generate(s);
  write_corpus(dir / "train" / "manifest.json", corpus.train);
  if (!corpus.test.empty()) write_corpus(dir / "test" / "manifest.json", corpus.test);

  json stats;
  for (const auto& [name, split] : {std::pair{"train", &corpus.train}, std::pair{"test", &corpus.test}}) {
    const CorpusStats st = corpus_stats(*split, s.num_classes);
    stats[name] = {{"videos", st.videos},
                   {"segments", st.total_segments},
                   {"instances", st.instances},
                   {"class_instance_counts", st.class_instance_counts},
                   {"mean_instance_length", st.mean_instance_length},
                   {"instance_coverage", st.instance_coverage},
                   {"labeled_coverage", st.labeled_coverage}};
  }
  write_text(dir / "stats.json", stats.dump(2) + "\n");
  write_run_config(dir, c);
  out << "wrote " << corpus.train.size() << " training and " << corpus.test.size() << " test videos to "
      << dir.string() << "\n";
  return kExitOk;
}

int cmd_labelgen(const Config& c, std::ostream& out) {
  const fs::path manifest = c.existing("manifest");
  const fs::path dir = c.required_out();
  const SupervisionMode mode = supervision(c.str("supervision"));
  LoadedCorpus corpus = ingest_corpus(manifest, c.num_classes());
  relabel_corpus(corpus.videos, corpus.num_classes, mode, RunSeeds::from_root(c.count("seed")).labels);
  fs::create_directories(dir);
  write_manifest(dir / "manifest.json", corpus.videos, corpus.feature_files);

  std::size_t labeled = 0;
  std::size_t segments = 0;
  for (const Video& v : corpus.videos) {
    labeled += v.labels.labeled_segment_count();
    segments += v.features.length();
  }
  out << "relabeled " << corpus.videos.size() << " videos (" << to_string(mode) << "): " << labeled << " of "
      << segments << " segments labeled\n";

  if (!c.path("annotations").empty()) {
    const std::vector<AnnotationLog> logs = read_annotation_logs(c.existing("annotations"));
    json doc;
    json per_video = json::array();
    for (const AnnotationLog& log : logs)
      per_video.push_back({{"video_id", log.video_id}, {"phi", annotation_ratio(log)}});
    doc["videos"] = per_video;
    doc["phi"] = logs.empty() ? 0.0 : annotation_ratio(logs);
    write_text(dir / "annotation_ratio.json", doc.dump(2) + "\n");
    out << "annotation ratio over " << logs.size() << " videos: " << fmt(doc["phi"].get<double>()) << "\n";
  }
  write_run_config(dir, c);
  return kExitOk;
}

int cmd_train(const Config& c, std::ostream& out) {
  const fs::path manifest = c.existing("manifest");
  const fs::path dir = c.required_out();
  TrainConfig tc = train_config(c);
  LoadedCorpus corpus = ingest_corpus(manifest, c.num_classes());
  if (corpus.videos.empty()) throw DataError("manifest lists no videos: " + manifest.string());

  const RunSeeds seeds = RunSeeds::from_root(c.count("seed"));
  if (!c.str("supervision").empty())
    relabel_corpus(corpus.videos, corpus.num_classes, supervision(c.str("supervision")), seeds.labels);
  tc.seed = seeds.train;

  fs::create_directories(dir);
  write_run_config(dir, c);
  std::ofstream history(dir / "history.jsonl", std::ios::binary);
  if (!history) throw std::runtime_error("cannot write " + (dir / "history.jsonl").string());

  TrainHooks hooks;
  hooks.on_step = [&](const StepRecord& r) { history << to_json_line(r) << "\n"; };
  hooks.on_checkpoint = [&](std::size_t step, const Parameters& p) {
    save_checkpoint(dir / ("checkpoint_step" + std::to_string(step) + ".bin"), {p, c.count("seed"), step});
  };

  const std::size_t dim = corpus.videos.front().features.dim();
  const TrainResult result =
      train(corpus.videos, init_params(dim, corpus.num_classes, seeds.init), tc, hooks);
  history.close();
  save_checkpoint(dir / "checkpoint.bin", {result.params, c.count("seed"), tc.max_steps});

  out << "trained " << tc.max_steps << " steps on " << corpus.videos.size() << " videos";
  if (!result.history.steps.empty()) out << "; final loss " << fmt(result.history.steps.back().total);
  out << "\n";
  return kExitOk;
}

int cmd_eval(const Config& c, std::ostream& out) {
  const fs::path manifest = c.existing("manifest");
  const fs::path checkpoint_path = c.existing("checkpoint");
  const fs::path dir = c.required_out();
  const EvalOptions options = eval_options(c);

  const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  const std::size_t N = checkpoint.params.num_classes();
  if (c.num_classes() && *c.num_classes() != N)
    throw UsageError("--num-classes " + std::to_string(*c.num_classes()) + " does not match the checkpoint (" +
                     std::to_string(N) + ")");
  const LoadedCorpus corpus = ingest_corpus(manifest, N);
  for (const Video& v : corpus.videos)
    if (v.features.dim() != checkpoint.params.feature_dim())
      throw DataError("video " + v.features.video_id + " has D=" + std::to_string(v.features.dim()) +
                      " but the checkpoint expects " + std::to_string(checkpoint.params.feature_dim()));

  const EvalReport report = evaluate(checkpoint.params, corpus.videos, options);
  fs::create_directories(dir);
  write_run_config(dir, c);
  write_text(dir / "report.json", report_to_json(report) + "\n");

  std::ostringstream proposals;
  proposals << "video_id,class,start_s,end_s,score\n";
  std::ostringstream scores;
  scores << "video_id,class,score,probability,predicted\n";
  for (std::size_t i = 0; i < corpus.videos.size(); ++i) {
    const FeatureSequence& fs_ = corpus.videos[i].features;
    const VideoPrediction& pred = report.predictions[i];
    const double seconds_per_segment = static_cast<double>(fs_.frames_per_segment) / fs_.fps;
    for (const Proposal& p : pred.proposals)
      proposals << fs_.video_id << "," << p.class_index << "," << fmt(p.start_segment * seconds_per_segment) << ","
                << fmt((p.end_segment + 1) * seconds_per_segment) << "," << fmt(p.score) << "\n";
    for (std::size_t n = 0; n < N; ++n) {
      const bool predicted =
          std::find(pred.predicted_classes.begin(), pred.predicted_classes.end(), n) != pred.predicted_classes.end();
      scores << fs_.video_id << "," << n << "," << fmt(pred.scores.scores[n]) << "," << fmt(pred.scores.pmf[n])
             << "," << (predicted ? 1 : 0) << "\n";
    }
  }
  write_text(dir / "proposals.csv", proposals.str());
  write_text(dir / "video_scores.csv", scores.str());

  if (!c.flag("skip_cas")) {
    fs::create_directories(dir / "cas");
    for (std::size_t i = 0; i < corpus.videos.size(); ++i) {
      const Video& v = corpus.videos[i];
      const CasValues cas = infer(checkpoint.params, v.features.x);
      const Tensor2& fused = report.predictions[i].fused;
      const double seconds_per_segment = static_cast<double>(v.features.frames_per_segment) / v.features.fps;
      std::ostringstream csv;
      csv << "t,start_s";
      for (const char* prefix : {"cls", "loc", "fused"})
        for (std::size_t n = 0; n < N; ++n) csv << "," << prefix << "_" << n;
      csv << "\n";
      for (std::size_t t = 0; t < v.features.length(); ++t) {
        csv << t << "," << fmt(t * seconds_per_segment);
        for (const Tensor2* m : {&cas.cls, &cas.loc, &fused})
          for (std::size_t n = 0; n < N; ++n) csv << "," << fmt((*m)(t, n));
        csv << "\n";
      }
      write_text(dir / "cas" / (v.features.video_id + ".csv"), csv.str());
    }
  }

  out << "classification mAP " << fmt(report.classification_map) << "\n";
  for (const auto& [t, m] : report.map_at_iou) out << grid_label(t) << " " << fmt(m) << "\n";
  return kExitOk;
}

int cmd_gradcheck(const Config& c, std::ostream& out) {
  const double tolerance = c.real("tolerance");
  const double epsilon = c.real("epsilon");
  if (epsilon < 1e-7 || epsilon > 1e-3) throw UsageError("--epsilon must lie in [1e-7, 1e-3]");
  if (c.count("instances") == 0) throw UsageError("--instances must be positive");
  const auto rows = gradcheck_suite(c.count("seed"), c.count("instances"), epsilon);

  std::ostringstream table;
  table << "loss,instances,max_rel_error,seconds,status\n";
  bool all_pass = true;
  for (const GradCheckRow& r : rows) {
    const bool pass = r.max_rel_error < tolerance;
    all_pass = all_pass && pass;
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", r.max_rel_error);
    table << r.loss << "," << r.instances << "," << err << "," << fmt(r.seconds) << "," << (pass ? "pass" : "FAIL")
          << "\n";
  }
  out << table.str();
  if (!c.path("out").empty()) {
    fs::create_directories(c.path("out"));
    write_text(c.path("out") / "gradcheck.csv", table.str());
    write_run_config(c.path("out"), c);
  }
  return all_pass ? kExitOk : kExitFailure;
}

std::vector<SupervisionMode> supervision_list(const std::string& text) {
  std::vector<SupervisionMode> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(supervision(item));
  if (out.empty()) throw UsageError("--supervision: empty list");
  return out;
}

int cmd_ablation(const Config& c, std::ostream& out) {
  std::vector<LossCombo> combos;
  try {
    combos = parse_combos(c.str("modes"));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const std::vector<SupervisionMode> modes = supervision_list(c.str("supervision"));
  const std::size_t runs = c.count("seeds");
  if (runs == 0) throw UsageError("--seeds must be positive");
  const bool use_synth = c.flag("synth");
  if (use_synth == !c.path("manifest").empty())
    throw UsageError("ablation needs exactly one of --manifest or --synth");
  const TrainConfig base = train_config(c);
  const EvalOptions options = eval_options(c);
  const std::uint64_t root = c.count("seed");

  // Corpora per seed: the synthetic generator is reseeded, a manifest is fixed.
  struct Splits {
    Corpus train;
    Corpus test;
    std::size_t num_classes = 0;
  };
  std::vector<Splits> splits;
  if (use_synth) {
    for (std::size_t r = 0; r < runs; ++r) {
      SynthConfig s;
      s.seed = root + r;
      SynthCorpus corpus = generate(s);
      splits.push_back({std::move(corpus.train), std::move(corpus.test), s.num_classes});
    }
  } else {
    LoadedCorpus train_corpus = ingest_corpus(c.existing("manifest"), c.num_classes());
    LoadedCorpus test_corpus = c.path("test_manifest").empty()
                                   ? train_corpus
                                   : ingest_corpus(c.existing("test_manifest"), train_corpus.num_classes);
    if (test_corpus.num_classes != train_corpus.num_classes)
      throw DataError("training and test manifests disagree on the number of classes");
    if (train_corpus.videos.empty()) throw DataError("training manifest lists no videos");
    splits.assign(runs, {train_corpus.videos, test_corpus.videos, train_corpus.num_classes});
  }

  struct Cell {
    SupervisionMode mode;
    LossCombo combo;
    std::size_t run;
  };
  std::vector<Cell> cells;
  for (SupervisionMode m : modes)
    for (const LossCombo& combo : combos)
      for (std::size_t r = 0; r < runs; ++r) cells.push_back({m, combo, r});

  auto run_cell = [&](const Cell& cell) {
    TrainConfig tc = base;
    tc.loss_weights = cell.combo.apply(base.loss_weights);
    const Splits& s = splits[cell.run];
    return train_and_evaluate(s.train, s.test, s.num_classes, cell.mode, root + cell.run, tc, options).report;
  };

  std::vector<EvalReport> reports(cells.size());
  const std::size_t jobs = std::max<std::uint64_t>(1, c.count("jobs"));
  for (std::size_t begin = 0; begin < cells.size(); begin += jobs) {
    std::vector<std::future<EvalReport>> pending;
    const std::size_t end = std::min(cells.size(), begin + jobs);
    for (std::size_t i = begin; i < end; ++i)
      pending.push_back(std::async(jobs == 1 ? std::launch::deferred : std::launch::async, run_cell, cells[i]));
    for (std::size_t i = begin; i < end; ++i) reports[i] = pending[i - begin].get();
  }

  std::ostringstream header;
  header << "supervision,mode";
  for (double t : options.iou_thresholds) header << "," << grid_label(t);
  header << ",cls_map";
  std::ostringstream per_run;
  per_run << header.str() << ",seed\n";
  std::ostringstream table;
  table << header.str() << ",seeds\n";

  for (std::size_t i = 0; i < cells.size(); i += runs) {
    const Cell& cell = cells[i];
    std::vector<double> mean(options.iou_thresholds.size(), 0.0);
    double cls = 0.0;
    for (std::size_t r = 0; r < runs; ++r) {
      const EvalReport& rep = reports[i + r];
      per_run << to_string(cell.mode) << "," << cell.combo.name();
      for (std::size_t k = 0; k < mean.size(); ++k) {
        const double m = rep.map_at_iou.at(options.iou_thresholds[k]);
        mean[k] += m / static_cast<double>(runs);
        per_run << "," << fmt(m);
      }
      cls += rep.classification_map / static_cast<double>(runs);
      per_run << "," << fmt(rep.classification_map) << "," << root + r << "\n";
    }
    table << to_string(cell.mode) << "," << cell.combo.name();
    for (double m : mean) table << "," << fmt(m);
    table << "," << fmt(cls) << "," << runs << "\n";
  }

  out << table.str();
  if (!c.path("out").empty()) {
    const fs::path dir = c.path("out");
    fs::create_directories(dir);
    write_text(dir / "ablation.csv", table.str());
    write_text(dir / "ablation_runs.csv", per_run.str());
    write_run_config(dir, c);
  }
  return kExitOk;
}

}  // namespace

std::vector<double> parse_iou_grid(const std::string& text) {
  std::vector<double> grid;
  const auto check = [&](double v) {
    if (!(v > 0.0 && v <= 1.0)) throw UsageError("IoU threshold " + fmt(v) + " is outside (0, 1]");
  };
  if (std::count(text.begin(), text.end(), ':') == 2) {
    const std::size_t a = text.find(':');
    const std::size_t b = text.find(':', a + 1);
    const double start = to_real("iou_grid", text.substr(0, a));
    const double step = to_real("iou_grid", text.substr(a + 1, b - a - 1));
    const double stop = to_real("iou_grid", text.substr(b + 1));
    if (step <= 0.0 || stop < start) throw UsageError("--iou-grid: empty range '" + text + "'");
    // Index-based so 0.1:0.1:0.7 yields exactly 0.1, 0.2, ..., 0.7 after rounding.
    const auto count = static_cast<std::size_t>(std::floor((stop - start) / step + 1e-9)) + 1;
    for (std::size_t i = 0; i < count; ++i) grid.push_back(std::round((start + i * step) * 1e9) / 1e9);
  } else {
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) grid.push_back(to_real("iou_grid", item));
  }
  if (grid.empty()) throw UsageError("--iou-grid is empty");
  for (double v : grid) check(v);
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Weakly-supervised temporal action localization with segment-level labels"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  struct Bound {
    std::vector<KeySpec> keys;
    std::map<std::string, std::string> raw;
    std::map<std::string, bool> flags;
    std::map<std::string, CLI::Option*> options;
    std::string config_path;
  };
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "generate a synthetic corpus with planted instances"},
      {"labelgen", "sample segment labels from boundary annotations"},
      {"train", "train a model and write a checkpoint and loss history"},
      {"eval", "evaluate a checkpoint: mAP report, proposals and CAS tables"},
      {"gradcheck", "finite-difference check of every loss"},
      {"ablation", "train and evaluate a grid of loss combinations"},
  };
  std::map<std::string, Bound> bound;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, description] : commands) {
    CLI::App* sub = app.add_subcommand(name, description);
    subs[name] = sub;
    Bound& b = bound[name];
    b.keys = keys_for(name);
    sub->add_option("--config", b.config_path, "JSON config; flags override it");
    for (const KeySpec& k : b.keys) {
      std::string help = k.help;
      if (k.kind != Kind::kBool) {
        const std::string shown = k.fallback.is_string() ? k.fallback.get<std::string>() : k.fallback.dump();
        if (!shown.empty()) help += " [" + shown + "]";
        b.options[k.name] = sub->add_option(flag_name(k.name), b.raw[k.name], help);
      } else {
        b.options[k.name] = sub->add_flag(flag_name(k.name), b.flags[k.name], help);
      }
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  std::string command;
  for (const auto& [name, sub] : subs)
    if (sub->parsed()) command = name;
  Bound& b = bound.at(command);

  try {
    Config config{command, json::object()};
    for (const KeySpec& k : b.keys) config.values[k.name] = k.kind == Kind::kGrid ? grid_json(k.name, k.fallback)
                                                                                   : k.fallback;
    if (!b.config_path.empty()) {
      std::ifstream in(b.config_path);
      if (!in) throw UsageError("--config: cannot read " + b.config_path);
      json file;
      try {
        file = json::parse(in);
      } catch (const json::parse_error& e) {
        throw UsageError("--config: " + std::string(e.what()));
      }
      if (!file.is_object()) throw UsageError("--config: expected a JSON object");
      for (const auto& [key, value] : file.items()) {
        if (key == "command") {
          if (value != command) throw UsageError("--config was written for '" + value.dump() + "'");
          continue;
        }
        const auto spec = std::find_if(b.keys.begin(), b.keys.end(), [&](const KeySpec& k) { return k.name == key; });
        if (spec == b.keys.end()) throw UsageError("--config: unknown key '" + key + "' for " + command);
        config.values[key] = coerce(*spec, value);
      }
    }
    for (const KeySpec& k : b.keys)
      if (b.options.at(k.name)->count() > 0) config.values[k.name] = from_flag(k, b.raw[k.name]);

    if (command == "synth") return cmd_synth(config, out);
    if (command == "labelgen") return cmd_labelgen(config, out);
    if (command == "train") return cmd_train(config, out);
    if (command == "eval") return cmd_eval(config, out);
    if (command == "gradcheck") return cmd_gradcheck(config, out);
    return cmd_ablation(config, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace segloc::cli
