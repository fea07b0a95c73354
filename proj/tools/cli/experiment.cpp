#include "experiment.hpp"

#include <chrono>
#include <random>
#include <stdexcept>

#include "segloc/grad_check.hpp"
#include "segloc/model.hpp"
#include "segloc/seeds.hpp"

namespace segloc::cli {

std::string LossCombo::name() const {
  if (psl && sl && pl) return "ALL";
  std::string out = "CL";
  if (psl) out += "+PSL";
  if (sl) out += "+SL";
  if (pl) out += "+PL";
  return out;
}

LossWeights LossCombo::apply(LossWeights w) const {
  if (!psl) w.alpha = 0.0;
  if (!sl) w.beta = 0.0;
  if (!pl) w.gamma = 0.0;
  return w;
}

LossCombo parse_combo(std::string_view text) {
  if (text == "ALL") return {true, true, true};
  LossCombo combo;
  bool saw_cl = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t plus = text.find('+', pos);
    const std::string_view term = text.substr(pos, plus == std::string_view::npos ? text.npos : plus - pos);
    bool* flag = nullptr;
    if (term == "CL") {
      if (saw_cl) throw std::invalid_argument("loss combination repeats CL: " + std::string(text));
      saw_cl = true;
    } else if (term == "PSL") {
      flag = &combo.psl;
    } else if (term == "SL") {
      flag = &combo.sl;
    } else if (term == "PL") {
      flag = &combo.pl;
    } else {
      throw std::invalid_argument("unknown loss term '" + std::string(term) + "' in " + std::string(text));
    }
    if (flag != nullptr) {
      if (*flag) throw std::invalid_argument("loss combination repeats a term: " + std::string(text));
      *flag = true;
    }
    if (plus == std::string_view::npos) break;
    pos = plus + 1;
  }
  if (!saw_cl) throw std::invalid_argument("loss combination must include CL: " + std::string(text));
  return combo;
}

std::vector<LossCombo> parse_combos(std::string_view list) {
  std::vector<LossCombo> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const std::size_t comma = list.find(',', pos);
    const std::string_view item = list.substr(pos, comma == std::string_view::npos ? list.npos : comma - pos);
    if (!item.empty()) out.push_back(parse_combo(item));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw std::invalid_argument("empty loss combination list");
  return out;
}

std::vector<LossCombo> full_grid() {
  return {{false, false, false}, {true, false, false}, {false, true, false}, {false, false, true},
          {true, true, false},   {true, false, true},  {false, true, true},  {true, true, true}};
}

RunSeeds RunSeeds::from_root(std::uint64_t root) {
  return {derive_seed(root, "labels"), derive_seed(root, "init"), derive_seed(root, "train")};
}

RunOutcome train_and_evaluate(Corpus train_split, const Corpus& test_split, std::size_t num_classes,
                              SupervisionMode mode, std::uint64_t root_seed, const TrainConfig& config,
                              const EvalOptions& eval) {
  if (train_split.empty()) throw std::invalid_argument("training split is empty");
  const RunSeeds seeds = RunSeeds::from_root(root_seed);
  relabel_corpus(train_split, num_classes, mode, seeds.labels);
  TrainConfig tc = config;
  tc.seed = seeds.train;
  const std::size_t dim = train_split.front().features.dim();
  RunOutcome out{{}, train(train_split, init_params(dim, num_classes, seeds.init), tc)};
  out.report = evaluate(out.trained.params, test_split, eval);
  return out;
}

namespace {

struct Problem {
  Tensor2 x;
  LabelSet labels;
  Parameters params;
};

Problem random_problem(Rng& rng) {
  constexpr std::size_t kDim = 5;
  constexpr std::size_t kClasses = 3;
  std::uniform_int_distribution<std::size_t> length_dist(6, 12);
  std::normal_distribution<double> normal(0.0, 1.0);
  Problem p;
  const std::size_t l = length_dist(rng);
  p.x = Tensor2(l, kDim);
  for (double& v : p.x.data()) v = normal(rng);

  // One or two non-overlapping instances, each labeled at one segment.
  std::vector<GroundTruthInstance> instances;
  std::uniform_int_distribution<std::size_t> class_dist(0, kClasses - 1);
  const std::size_t half = l / 2;
  instances.push_back({class_dist(rng), 0, half - 1});
  if (rng() % 2 == 0) instances.push_back({class_dist(rng), half, l - 1});
  p.labels = sample_segment_labels(instances, kClasses, SupervisionMode::kOneSegment, rng());

  // Random biases and sphere rows keep every path of the graph exercised.
  p.params = init_params(kDim, kClasses, rng());
  for (Tensor2* t : p.params.tensors())
    for (double& v : t->data()) v += 0.3 * normal(rng);
  return p;
}

ParamVars unpack(std::span<const ad::Var> v) {
  return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
}

std::vector<Tensor2> flatten(const Parameters& params) {
  std::vector<Tensor2> out;
  for (const Tensor2* t : params.tensors()) out.push_back(*t);
  return out;
}

}  // namespace

std::vector<GradCheckRow> gradcheck_suite(std::uint64_t seed, std::size_t instances, double epsilon) {
  using Builder = std::function<ad::Var(const CasPair&, const ParamVars&, const LabelSet&, const Tensor2& S)>;
  const LossWeights defaults;
  const std::vector<std::pair<std::string, Builder>> losses = {
      {"classification",
       [&](const CasPair& cas, const ParamVars&, const LabelSet& labels, const Tensor2&) {
         return classification_loss(class_scores(cas.cls, labels.labeled_segment_count(), defaults.r_fallback),
                                    labels.y);
       }},
      {"partial_segment",
       [](const CasPair& cas, const ParamVars&, const LabelSet& labels, const Tensor2&) {
         return partial_segment_loss(cas.loc, labels.segments);
       }},
      {"sphere",
       [&](const CasPair& cas, const ParamVars& pv, const LabelSet& labels, const Tensor2&) {
         return sphere_loss(cas.f, ad::softmax_cols(cas.loc), labels.y, pv.sphere_weight, defaults.margin_m);
       }},
      {"propagation",
       [](const CasPair& cas, const ParamVars&, const LabelSet&, const Tensor2& S) {
         return propagation_loss(cas.loc, S);
       }},
      {"total",
       [&](const CasPair& cas, const ParamVars& pv, const LabelSet& labels, const Tensor2& S) {
         return total_loss(cas, labels, defaults, pv.sphere_weight, &S).total;
       }},
  };

  std::vector<GradCheckRow> rows;
  for (const auto& [name, build] : losses) {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(derive_seed(seed, "gradcheck"));  // same problems for every loss
    GradCheckRow row{name, instances, 0.0, 0.0};
    for (std::size_t i = 0; i < instances; ++i) {
      const Problem p = random_problem(rng);
      // S is a constant of the loss, so it is fixed at the unperturbed point.
      const Tensor2 S = similarity_matrix(infer(p.params, p.x).f, defaults.similarity_mode);
      const std::vector<Tensor2> flat = flatten(p.params);
      const auto report = ad::grad_check(
          [&](ad::Graph& graph, std::span<const ad::Var> vars) {
            const ParamVars pv = unpack(vars);
            return build(forward(graph, pv, p.x, nullptr), pv, p.labels, S);
          },
          flat, epsilon);
      row.max_rel_error = std::max(row.max_rel_error, report.max_rel_error);
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows.push_back(row);
  }
  return rows;
}

}  // namespace segloc::cli
