#include <doctest.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cli/cli.hpp"
#include "cli/experiment.hpp"
#include "helpers.hpp"
#include "segloc/checkpoint.hpp"

using namespace segloc;
using segloc::test::TempDir;
using json = nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "segloc");
  std::ostringstream out;
  std::ostringstream err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

json read_json(const std::filesystem::path& p) { return json::parse(slurp(p)); }

/// A small synthetic corpus on disk.
void small_synth(const TempDir& dir, const std::string& name = "data") {
  const Result r = run_cli({"synth", "--out", (dir / name).string(), "--num-videos", "6", "--num-test-videos", "3",
                            "--min-length", "20", "--max-length", "30", "--feature-dim", "12", "--num-classes", "3",
                            "--seed", "4"});
  REQUIRE(r.code == 0);
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("loss combinations") {
    CHECK(cli::parse_combo("CL") == cli::LossCombo{});
    CHECK(cli::parse_combo("CL+PSL") == cli::LossCombo{true, false, false});
    CHECK(cli::parse_combo("ALL") == cli::LossCombo{true, true, true});
    CHECK(cli::parse_combo("CL+PSL+SL+PL") == cli::LossCombo{true, true, true});
    CHECK(cli::parse_combo("CL+PL").name() == "CL+PL");
    CHECK(cli::parse_combo("CL+PSL+SL+PL").name() == "ALL");
    CHECK_THROWS_AS(cli::parse_combo("PSL"), std::invalid_argument);
    CHECK_THROWS_AS(cli::parse_combo("CL+XL"), std::invalid_argument);
    CHECK_THROWS_AS(cli::parse_combo("CL+PL+PL"), std::invalid_argument);

    const auto grid = cli::full_grid();
    REQUIRE(grid.size() == 8);
    std::vector<std::string> names;
    for (const auto& g : grid) names.push_back(g.name());
    CHECK(names == std::vector<std::string>{"CL", "CL+PSL", "CL+SL", "CL+PL", "CL+PSL+SL", "CL+PSL+PL", "CL+SL+PL",
                                            "ALL"});

    const LossWeights w = cli::parse_combo("CL+SL").apply(LossWeights{});
    CHECK(w.alpha == 0.0);
    CHECK(w.beta == 0.0001);
    CHECK(w.gamma == 0.0);
  }

  TEST_CASE("run seeds are distinct and stable") {
    const auto a = cli::RunSeeds::from_root(3);
    const auto b = cli::RunSeeds::from_root(3);
    CHECK(a.labels == b.labels);
    CHECK(a.init == b.init);
    CHECK(a.train == b.train);
    CHECK(a.labels != a.init);
    CHECK(a.init != a.train);
    CHECK(cli::RunSeeds::from_root(4).train != a.train);
  }

  TEST_CASE("IoU grid parsing") {
    const auto range = cli::parse_iou_grid("0.1:0.1:0.7");
    REQUIRE(range.size() == 7);
    CHECK(range[2] == 0.3);
    CHECK(range[6] == 0.7);
    CHECK(cli::parse_iou_grid("0.5,0.3,0.5") == std::vector<double>{0.3, 0.5});
    CHECK(cli::parse_iou_grid("1") == std::vector<double>{1.0});
    CHECK_THROWS_AS(cli::parse_iou_grid("0,0.5"), cli::UsageError);
    CHECK_THROWS_AS(cli::parse_iou_grid("0.5,1.2"), cli::UsageError);
    CHECK_THROWS_AS(cli::parse_iou_grid("0.5:-0.1:0.1"), cli::UsageError);
    CHECK_THROWS_AS(cli::parse_iou_grid("abc"), cli::UsageError);
  }

  TEST_CASE("gradcheck reports every loss") {
    TempDir dir("gc");
    const Result r = run_cli({"gradcheck", "--seed", "1", "--instances", "3", "--out", dir.path().string()});
    CHECK(r.code == 0);
    const auto rows = lines(r.out);
    REQUIRE(rows.size() == 6);
    CHECK(rows[0] == "loss,instances,max_rel_error,seconds,status");
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].ends_with(",pass"));
    CHECK(r.out.find("partial_segment") != std::string::npos);
    CHECK(r.out.find("propagation") != std::string::npos);
    CHECK(slurp(dir / "gradcheck.csv") == r.out);
  }

  TEST_CASE("gradcheck fails when the tolerance cannot be met") {
    const Result r = run_cli({"gradcheck", "--instances", "1", "--tolerance", "0"});
    CHECK(r.code == 1);
    CHECK(r.out.find("FAIL") != std::string::npos);
  }

  TEST_CASE("usage errors exit with 2") {
    CHECK(run_cli({}).code == 2);
    CHECK(run_cli({"launch"}).code == 2);
    CHECK(run_cli({"gradcheck", "--no-such-flag"}).code == 2);
    CHECK(run_cli({"gradcheck", "--instances", "many"}).code == 2);
    CHECK(run_cli({"synth"}).code == 2);
    CHECK(run_cli({"train", "--out", "x"}).code == 2);
    CHECK(run_cli({"train", "--manifest", "/nonexistent/manifest.json", "--out", "x"}).code == 2);
    CHECK(run_cli({"eval", "--iou-grid", "0.5,2", "--out", "x"}).code == 2);
    CHECK(run_cli({"ablation", "--max-steps", "1"}).code == 2);
    CHECK(run_cli({"ablation", "--synth", "--modes", "CL+XYZ"}).code == 2);
    CHECK(run_cli({"ablation", "--synth", "--supervision", "three-segment"}).code == 2);
    const Result r = run_cli({"train", "--alpha", "-1", "--out", "x"});
    CHECK(r.code == 2);
    CHECK_FALSE(r.err.empty());
  }

  TEST_CASE("help exits cleanly") {
    const Result r = run_cli({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("ablation") != std::string::npos);
  }

  TEST_CASE("config files sit between defaults and flags") {
    TempDir dir("cfg");
    {
      std::ofstream cfg(dir / "synth.json");
      cfg << R"({"command": "synth", "num_videos": 3, "num_test_videos": 2, "seed": 5, "min_length": 20,
                 "max_length": 25, "feature_dim": 10})";
    }
    const Result r = run_cli({"synth", "--config", (dir / "synth.json").string(), "--num-videos", "4", "--out",
                              (dir / "corpus").string()});
    REQUIRE(r.code == 0);
    const json used = read_json(dir / "corpus/run_config.json");
    CHECK(used.at("command") == "synth");
    CHECK(used.at("num_videos") == 4);
    CHECK(used.at("num_test_videos") == 2);
    CHECK(used.at("seed") == 5);
    CHECK(used.at("num_classes") == 4);
    const json stats = read_json(dir / "corpus/stats.json");
    CHECK(stats.at("train").at("videos") == 4);
    CHECK(stats.at("test").at("videos") == 2);
    CHECK(ingest_corpus(dir / "corpus/train/manifest.json").videos.front().features.dim() == 10);
  }

  TEST_CASE("bad config files are usage errors") {
    TempDir dir("badcfg");
    std::ofstream(dir / "unknown.json") << R"({"num_videos": 3, "learning_rate": 1})";
    std::ofstream(dir / "other.json") << R"({"command": "train"})";
    std::ofstream(dir / "broken.json") << "{";
    std::ofstream(dir / "typed.json") << R"({"num_videos": "many"})";
    for (const char* name : {"unknown.json", "other.json", "broken.json", "typed.json", "missing.json"}) {
      CAPTURE(name);
      CHECK(run_cli({"synth", "--config", (dir / name).string(), "--out", (dir / "o").string()}).code == 2);
    }
  }

  TEST_CASE("runtime failures exit with 1") {
    TempDir dir("rt");
    std::ofstream(dir / "manifest.json") << R"({"videos": [{"video_id": "a"}]})";
    CHECK(run_cli({"train", "--manifest", (dir / "manifest.json").string(), "--out", (dir / "o").string()}).code ==
          1);
    std::ofstream(dir / "ckpt.bin") << "garbage";
    small_synth(dir);
    CHECK(run_cli({"eval", "--manifest", (dir / "data/test/manifest.json").string(), "--checkpoint",
                   (dir / "ckpt.bin").string(), "--out", (dir / "e").string()})
              .code == 1);
  }

  TEST_CASE("synth, train and eval write their outputs") {
    TempDir dir("e2e");
    small_synth(dir);
    CHECK(std::filesystem::exists(dir / "data/train/manifest.json"));
    CHECK(std::filesystem::exists(dir / "data/test/manifest.json"));
    CHECK(std::filesystem::exists(dir / "data/stats.json"));

    const std::string run = (dir / "run").string();
    const Result t = run_cli({"train", "--manifest", (dir / "data/train/manifest.json").string(), "--out", run,
                              "--max-steps", "6", "--batch-size", "2", "--checkpoint-every", "3", "--lr", "1e-3"});
    REQUIRE(t.code == 0);
    CHECK(lines(slurp(dir / "run/history.jsonl")).size() == 6);
    CHECK(std::filesystem::exists(dir / "run/checkpoint_step3.bin"));
    CHECK(std::filesystem::exists(dir / "run/checkpoint_step6.bin"));
    const Checkpoint ck = load_checkpoint(dir / "run/checkpoint.bin");
    CHECK(ck.step == 6);
    CHECK(ck.params.feature_dim() == 12);
    CHECK(ck.params.num_classes() == 3);
    CHECK(load_checkpoint(dir / "run/checkpoint_step6.bin").params == ck.params);
    CHECK(read_json(dir / "run/run_config.json").at("max_steps") == 6);

    const Result e = run_cli({"eval", "--manifest", (dir / "data/test/manifest.json").string(), "--checkpoint",
                              (dir / "run/checkpoint.bin").string(), "--out", (dir / "eval").string(),
                              "--iou-grid", "0.3,0.5"});
    REQUIRE(e.code == 0);
    const json report = read_json(dir / "eval/report.json");
    CHECK(report.at("map_at_iou").size() == 2);
    CHECK(report.at("videos") == 3);
    const auto props = lines(slurp(dir / "eval/proposals.csv"));
    CHECK(props.front() == "video_id,class,start_s,end_s,score");
    CHECK(lines(slurp(dir / "eval/video_scores.csv")).size() == 1 + 3 * 3);
    const auto cas = lines(slurp(dir / "eval/cas/synth_test_0000.csv"));
    CHECK(cas.front() == "t,start_s,cls_0,cls_1,cls_2,loc_0,loc_1,loc_2,fused_0,fused_1,fused_2");
    CHECK(cas[1].starts_with("0,0.000000,"));
    CHECK(cas[2].starts_with("1,0.533333,"));

    CHECK(run_cli({"eval", "--manifest", (dir / "data/test/manifest.json").string(), "--checkpoint",
                   (dir / "run/checkpoint.bin").string(), "--out", (dir / "eval2").string(), "--num-classes", "5"})
              .code == 2);
  }

  TEST_CASE("train is reproducible to the byte") {
    TempDir dir("det");
    small_synth(dir);
    for (const char* name : {"a", "b"}) {
      REQUIRE(run_cli({"train", "--manifest", (dir / "data/train/manifest.json").string(), "--out",
                       (dir / name).string(), "--max-steps", "8", "--batch-size", "3", "--seed", "11"})
                  .code == 0);
    }
    CHECK(slurp(dir / "a/checkpoint.bin") == slurp(dir / "b/checkpoint.bin"));
    CHECK(slurp(dir / "a/history.jsonl") == slurp(dir / "b/history.jsonl"));
  }

  TEST_CASE("labelgen resamples labels and reports annotation cost") {
    TempDir dir("lg");
    small_synth(dir);
    std::ofstream(dir / "ann.csv") << "video_id,t_a,l_dur\nsynth_train_0000,12,50\nsynth_train_0001,30,100\n";
    const Result r = run_cli({"labelgen", "--manifest", (dir / "data/train/manifest.json").string(), "--out",
                              (dir / "lab").string(), "--supervision", "two-segment", "--annotations",
                              (dir / "ann.csv").string()});
    REQUIRE(r.code == 0);
    const LoadedCorpus relabeled = ingest_corpus(dir / "lab/manifest.json");
    const LoadedCorpus original = ingest_corpus(dir / "data/train/manifest.json");
    REQUIRE(relabeled.videos.size() == original.videos.size());
    for (std::size_t i = 0; i < relabeled.videos.size(); ++i) {
      CHECK(relabeled.videos[i].features.x == original.videos[i].features.x);
      CHECK(relabeled.videos[i].labels.y == original.videos[i].labels.y);
    }
    const json phi = read_json(dir / "lab/annotation_ratio.json");
    CHECK(phi.at("videos").at(0).at("phi") == 0.24);
    CHECK(phi.at("phi").get<double>() == doctest::Approx(42.0 / 150.0).epsilon(1e-15));
  }

  TEST_CASE("ablation with three modes prints one row per mode") {
    TempDir dir("abl");
    const Result r = run_cli({"ablation", "--synth", "--modes", "CL,CL+PSL,ALL", "--supervision", "one-segment",
                              "--max-steps", "2", "--out", dir.path().string()});
    REQUIRE(r.code == 0);
    const auto rows = lines(r.out);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0] == "supervision,mode,map@0.1,map@0.2,map@0.3,map@0.4,map@0.5,map@0.6,map@0.7,cls_map,seeds");
    CHECK(rows[1].starts_with("one-segment,CL,"));
    CHECK(rows[2].starts_with("one-segment,CL+PSL,"));
    CHECK(rows[3].starts_with("one-segment,ALL,"));
    CHECK(slurp(dir / "ablation.csv") == r.out);
    CHECK(lines(slurp(dir / "ablation_runs.csv")).size() == 4);
  }

  TEST_CASE("ablation defaults to the full grid") {
    TempDir dir("grid");
    small_synth(dir);
    const Result r = run_cli({"ablation", "--manifest", (dir / "data/train/manifest.json").string(),
                              "--test-manifest", (dir / "data/test/manifest.json").string(), "--supervision",
                              "one-segment,two-segment", "--max-steps", "1", "--seeds", "2", "--iou-grid", "0.5"});
    REQUIRE(r.code == 0);
    const auto rows = lines(r.out);
    REQUIRE(rows.size() == 1 + 16);
    CHECK(rows[8].starts_with("one-segment,ALL,"));
    CHECK(rows[9].starts_with("two-segment,CL,"));
    for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].ends_with(",2"));
  }

  TEST_CASE("ablation cells are reproducible across job counts") {
    TempDir dir("jobs");
    small_synth(dir);
    const std::vector<std::string> base{"ablation", "--manifest", (dir / "data/train/manifest.json").string(),
                                        "--modes", "CL,ALL", "--max-steps", "3", "--seeds", "2"};
    auto serial = base;
    serial.insert(serial.end(), {"--jobs", "1"});
    auto parallel = base;
    parallel.insert(parallel.end(), {"--jobs", "3"});
    CHECK(run_cli(serial).out == run_cli(parallel).out);
  }
}
