// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "cli/cli.hpp"
#include "cli/experiment.hpp"
#include "micro.hpp"
#include "segloc/datamodel.hpp"
#include "segloc/log.hpp"
#include "segloc/losses.hpp"
#include "segloc/synthgen.hpp"

namespace fs = std::filesystem;
using namespace segloc;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 1 ------------------------------------------------------------------------------
Verdict gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = cli::gradcheck_suite(1, 20);
  const double elapsed = seconds_since(t0);
  bool ok = elapsed < 60.0;
  std::string detail;
  for (const auto& r : rows) {
    ok = ok && r.max_rel_error < 1e-5;
    detail += r.loss + "=" + fmt("%.1e", r.max_rel_error) + " ";
  }
  return {ok, detail + fmt("in %.1fs", elapsed)};
}

// 2 and 3 -----------------------------------------------------------------------------
constexpr int kSeeds = 5;

struct Table1 {
  double cl = 0.0;
  double cl_psl = 0.0;
  double all_one = 0.0;
  double all_two = 0.0;
  double seconds = 0.0;
};

Table1 run_table1() {
  Table1 t;
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig base;
  const EvalOptions eval;
  struct Cell {
    const char* combo;
    SupervisionMode mode;
    double* sink;
  };
  const Cell cells[] = {{"CL", SupervisionMode::kOneSegment, &t.cl},
                        {"CL+PSL", SupervisionMode::kOneSegment, &t.cl_psl},
                        {"ALL", SupervisionMode::kOneSegment, &t.all_one},
                        {"ALL", SupervisionMode::kTwoSegment, &t.all_two}};
  for (int seed = 0; seed < kSeeds; ++seed) {
    SynthConfig sc;
    sc.seed = static_cast<std::uint64_t>(seed);
    const SynthCorpus corpus = generate(sc);
    for (const Cell& cell : cells) {
      TrainConfig tc = base;
      tc.loss_weights = cli::parse_combo(cell.combo).apply(base.loss_weights);
      const auto outcome = cli::train_and_evaluate(corpus.train, corpus.test, sc.num_classes, cell.mode,
                                                   static_cast<std::uint64_t>(seed), tc, eval);
      *cell.sink += outcome.report.map_at_iou.at(0.5) / kSeeds;
    }
  }
  t.seconds = seconds_since(t0);
  return t;
}

Verdict table1_ordering(const Table1& t) {
  const bool ok = t.cl_psl - t.cl > 0.02 && t.all_one - t.cl_psl > 0.02;
  return {ok, "mAP@0.5 CL=" + fmt("%.4f", t.cl) + " CL+PSL=" + fmt("%.4f", t.cl_psl) + " ALL=" +
                  fmt("%.4f", t.all_one) + " (" + std::to_string(kSeeds) + " seeds" + fmt(", %.0fs)", t.seconds)};
}

Verdict supervision_monotonicity(const Table1& t) {
  return {t.all_two - t.all_one >= 0.0,
          "ALL mAP@0.5 two-segment=" + fmt("%.4f", t.all_two) + " one-segment=" + fmt("%.4f", t.all_one)};
}

// 4 ------------------------------------------------------------------------------
Verdict evaluation_oracle() {
  std::mt19937_64 rng(2024);
  const std::vector<double> grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  double worst = 0.0;
  for (int i = 0; i < 500; ++i) worst = std::max(worst, test::micro_case_error(test::random_micro_case(rng), grid));
  return {worst <= 1e-12, "500 micro-instances, largest deviation " + fmt("%.2e", worst)};
}

// 5 ------------------------------------------------------------------------------
Verdict loss_identities() {
  ad::Graph g;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;

  Tensor2 constant(9, 3);
  for (std::size_t n = 0; n < 3; ++n) {
    const double v = normal(rng);
    for (std::size_t t = 0; t < 9; ++t) constant(t, n) = v;
  }
  Tensor2 f(9, 4);
  for (double& v : f.data()) v = normal(rng);
  const double prop =
      propagation_loss(g.constant(constant), similarity_matrix(f, SimilarityMode::kNormalizedClamped))
          .value()
          .item();

  const std::vector<SegmentLabel> one{{0, 0}};
  const double psl = partial_segment_loss(g.constant(Tensor2::scalar(normal(rng))), one).value().item();

  Tensor2 single(6, 1);
  Tensor2 f6(6, 4);
  Tensor2 w1(1, 4);
  for (Tensor2* t : {&single, &f6, &w1})
    for (double& v : t->data()) v = normal(rng);
  const std::vector<std::uint8_t> y1{1};
  const double sphere =
      sphere_loss(g.constant(f6), ad::softmax_cols(g.constant(single)), y1, g.constant(w1), 4).value().item();

  const std::vector<std::uint8_t> y10{1, 0};
  const double cls = classification_loss(g.constant(Tensor2(1, 2)), y10).value().item();
  const double cls_err = std::abs(cls - 0.5 * std::log(2.0));

  const bool ok = prop == 0.0 && psl == 0.0 && sphere == 0.0 && cls_err <= 1e-12;
  return {ok, "prop=" + fmt("%g", prop) + " psl=" + fmt("%g", psl) + " sphere=" + fmt("%g", sphere) +
                  " |cls-ln2/2|=" + fmt("%.1e", cls_err)};
}

// 6 ------------------------------------------------------------------------------
Verdict determinism(const fs::path& work) {
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  std::ostringstream sink;
  const auto run = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "segloc");
    return cli::run(args, sink, sink);
  };
  if (run({"synth", "--out", (dir / "data").string(), "--seed", "6", "--num-videos", "16"}) != 0)
    return {false, "synth failed: " + sink.str()};
  for (const char* name : {"a", "b"}) {
    if (run({"train", "--manifest", (dir / "data/train/manifest.json").string(), "--out", (dir / name).string(),
             "--seed", "6", "--max-steps", "200", "--threads", "1"}) != 0)
      return {false, "train failed: " + sink.str()};
  }
  const bool ckpt = slurp(dir / "a/checkpoint.bin") == slurp(dir / "b/checkpoint.bin");
  const bool hist = slurp(dir / "a/history.jsonl") == slurp(dir / "b/history.jsonl");
  const bool nonempty = !slurp(dir / "a/history.jsonl").empty();
  return {ckpt && hist && nonempty, std::string("200-step runs: checkpoint ") + (ckpt ? "identical" : "differs") +
                                        ", history " + (hist ? "identical" : "differs")};
}

// 7 ------------------------------------------------------------------------------
Verdict annotation_metric() {
  const double phi = annotation_ratio(AnnotationLog{"v", 12.0, 50.0});
  const std::vector<AnnotationLog> logs{{"a", 10.0, 100.0}, {"b", 30.0, 100.0}};
  const double aggregate = annotation_ratio(logs);
  const double zero = annotation_ratio(AnnotationLog{"z", 0.0, 80.0});
  const bool ok = phi == 0.24 && aggregate == 0.20 && zero == 0.0;
  return {ok, "12/50=" + fmt("%g", phi) + " aggregate(10/100,30/100)=" + fmt("%g", aggregate)};
}

// 8 ------------------------------------------------------------------------------
Verdict classification_sanity() {
  const auto t0 = std::chrono::steady_clock::now();
  SynthConfig sc;
  sc.noise_sigma = 0.0;
  sc.separation = 6.0;
  sc.seed = 8;
  const SynthCorpus corpus = generate(sc);
  TrainConfig tc;
  tc.max_steps = 3000;
  const auto outcome =
      cli::train_and_evaluate(corpus.train, corpus.test, sc.num_classes, SupervisionMode::kOneSegment, 8, tc, {});
  const double m = outcome.report.classification_map;
  return {m >= 0.99, "classification mAP " + fmt("%.4f", m) + " after 3000 steps" + fmt(" (%.0fs)", seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string workdir = (fs::temp_directory_path() / "segloc_acceptance").string();
  std::vector<int> only;
  app.add_option("--workdir", workdir, "scratch directory");
  app.add_option("--only", only, "run just these criteria");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);
  set_warning_handler(nullptr);

  const auto wanted = [&](int k) { return only.empty() || std::find(only.begin(), only.end(), k) != only.end(); };
  std::optional<Table1> table1;
  const auto table = [&]() -> const Table1& {
    if (!table1) table1 = run_table1();
    return *table1;
  };

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"loss ordering CL < CL+PSL < ALL", [&] { return table1_ordering(table()); }},
      {"supervision monotonicity", [&] { return supervision_monotonicity(table()); }},
      {"evaluation oracle", evaluation_oracle},
      {"loss identities", loss_identities},
      {"determinism", [&] { return determinism(workdir); }},
      {"annotation metric", annotation_metric},
      {"classification sanity", classification_sanity},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int k = static_cast<int>(i) + 1;
    if (!wanted(k)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += v.pass ? 0 : 1;
    std::cout << "criterion " << k << " " << (v.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << v.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
