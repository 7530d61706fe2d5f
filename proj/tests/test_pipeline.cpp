// Copyright 2026 The varlora Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "varlora/checkpoint.hpp"
#include "varlora/errors.hpp"
#include "varlora/pipeline.hpp"

using namespace varlora;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

RunConfig tiny_config(const fs::path& root) {
  json j = {{"corpus", {{"n_entities", 6}}},
            {"model", {{"embed_dim", 16}, {"n_layers", 1}}},
            {"train", {{"epochs", 20}, {"batch_size", 4}}},
            {"sweep", {{"n_trials", 2}}},
            {"eval", {{"retain_eval", 10}}},
            {"theorem", {{"per_example_draws", 10}, {"minibatch_draws", 10}, {"minibatch_size", 2}}},
            {"root", root.string()}};
  return run_config_from_json(j);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("varlora_pipeline_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void prepare(const RunConfig& cfg) {
  gen_data(cfg);
  train_model(cfg, false);
  train_model(cfg, true);
}

// Shared artifacts for the tests that only read them.
const RunConfig& shared() {
  static const RunConfig cfg = [] {
    RunConfig c = tiny_config(scratch("shared"));
    prepare(c);
    return c;
  }();
  return cfg;
}

}  // namespace

TEST_CASE("run config round trip, overrides and validation") {
  const RunConfig d;
  CHECK(to_json(run_config_from_json(to_json(d))) == to_json(d));
  CHECK(d.sweep.n_trials == 15);
  CHECK(d.eval.utility_floor == 0.95);

  CHECK_THROWS_AS(run_config_from_json({{"bogus", 1}}), ContractError);
  CHECK_THROWS_AS(run_config_from_json({{"unlearn", {{"lrr", 1}}}}), ContractError);
  CHECK_THROWS_AS(run_config_from_json({{"train", {{"epochs", 0}}}}), ContractError);
  CHECK_THROWS_AS(run_config_from_json({{"model", {{"vocab_size", 128}}}}), ContractError);

  const json o = apply_overrides(json::object(), {"unlearn.lr=0.003", "adapters.method=fila",
                                                  "adapters.eps_relative=true", "root=\"x\""});
  const RunConfig c = run_config_from_json(o);
  CHECK(c.unlearn.lr == 0.003);
  CHECK(c.adapters.method == Method::kFila);
  CHECK(c.adapters.eps_relative);
  CHECK(c.root == "x");
  CHECK_THROWS_AS(apply_overrides(json::object(), {"novalue"}), ContractError);

  const RunConfig r4 = run_config_from_json({{"adapters", {{"rank", 4}}}});
  CHECK(r4.wlra.rank == 4);
}

TEST_CASE("layout tags") {
  RunConfig c;
  CHECK(Layout(c).run_tag == "vila-lora-top1-ihl");
  c.adapters.top_fraction = 0.0;
  CHECK(Layout(c).run_tag == "lora-ihl");
  c.adapters.top_fraction = 0.25;
  c.adapters.method = Method::kFila;
  c.adapters.scope = Scope::kFull;
  CHECK(Layout(c).importance_tag == "fila-full");
  CHECK(Layout(c).run_tag == "fila-full-top0.25-ihl");
}

TEST_CASE("gen-data is deterministic and persists the resolved config") {
  const RunConfig a = tiny_config(scratch("gen_a")), b = tiny_config(scratch("gen_b"));
  gen_data(a);
  gen_data(b);
  const Layout la(a), lb(b);
  CHECK(slurp(la.corpus()) == slurp(lb.corpus()));
  CHECK(slurp(la.split()) == slurp(lb.split()));
  CHECK(fs::exists(la.split().string() + ".config.json"));
  const Dataset d = load_dataset(a);
  CHECK(d.corpus.examples.size() == 60);
  CHECK(d.forget.size() == 10);
  CHECK(d.retain.size() == 50);
  CHECK(d.retain_eval.size() == 10);
}

TEST_CASE("train and retrain") {
  const RunConfig& cfg = shared();
  const Layout L(cfg);
  const Dataset d = load_dataset(cfg);
  const ParamSet base = load_checkpoint(L.base());
  const ParamSet retrain = load_checkpoint(L.retrain());
  // The oracle never saw the forget facts.
  const double rf = forward_nll(retrain, nullptr, d.forget);
  const double rr = forward_nll(retrain, nullptr, d.retain);
  CHECK(rf > rr + 1.0);
  CHECK(forward_nll(base, nullptr, d.forget) < rf - 1.0);

  const RunConfig again = tiny_config(scratch("train_again"));
  gen_data(again);
  const TrainSummary s = train_model(again, false);
  CHECK(s.digest == file_digest(L.base()));
  CHECK(s.epoch_loss.size() == 20);
}

TEST_CASE("estimate-importance") {
  RunConfig cfg = shared();
  const Layout L(cfg);
  const ImportanceSummary s = estimate_importance(cfg);
  CHECK(s.stored_floats == s.analytic_floats);
  CHECK(s.samples_forget == 10);
  CHECK(s.samples_retain == 50);

  // Full-scope Fisher map against a direct two-pass recomputation.
  cfg.adapters.method = Method::kFila;
  cfg.adapters.scope = Scope::kFull;
  const ImportanceSummary f = estimate_importance(cfg);
  CHECK(f.stored_floats == f.analytic_floats);
  const ImportanceMap map = load_importance_map(Layout(cfg).importance_dir() / "map.bin");
  const Dataset d = load_dataset(cfg);
  const ParamSet base = load_checkpoint(L.base());
  auto mean_sq = [&](const std::vector<Example>& set, const std::string& name) {
    Tensor acc(base.at(name).shape());
    for (const Example& e : set) {
      const Tensor g = per_example_grad(base, nullptr, e, GradScope::kWeights).weights.at(name);
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * g[i];
    }
    for (double& v : acc.raw()) v /= static_cast<double>(set.size());
    return acc;
  };
  for (const std::string name : {"layer0.wq", "head"}) {
    const Tensor num = mean_sq(d.forget, name), den = mean_sq(d.retain, name);
    const Tensor& m = map.values.at(name);
    double worst = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double expect = num[i] / (den[i] + cfg.adapters.eps);
      worst = std::max(worst, std::fabs(m[i] - expect) / std::max(1e-300, std::fabs(expect)));
    }
    CHECK(worst <= 1e-9);
  }
}

TEST_CASE("init-adapters preserves the model function") {
  RunConfig cfg = shared();
  estimate_importance(cfg);
  for (double top : {0.0, 0.5, 1.0}) {
    cfg.adapters.top_fraction = top;
    const auto report = init_adapters(cfg);
    const Layout L(cfg);
    const ParamSet base = load_checkpoint(L.base());
    const ParamSet init_base = load_checkpoint(L.run_dir() / "init_base.ckpt");
    const AdapterSet adapters = load_adapters(L.run_dir() / "init_adapters.bin");
    const Dataset d = load_dataset(cfg);
    const std::span<const Example> batch(d.forget.data(), 3);
    const Tensor before = forward_logits(base, nullptr, batch);
    const Tensor after = forward_logits(init_base, &adapters, batch);
    CHECK(max_abs_diff(before, after) <= 1e-10);
    std::size_t wlra = 0;
    for (const MatrixInitReport& r : report) wlra += r.status == "wlra" ? 1 : 0;
    if (top == 0.0) CHECK(wlra == 0);
    if (top == 1.0) CHECK(wlra == report.size());
  }
}

TEST_CASE("sweep trials are seeded and in range") {
  RunConfig cfg;
  for (std::size_t t = 0; t < 20; ++t) {
    const UnlearnConfig u = sample_trial(cfg, t);
    CHECK(u.lr >= cfg.sweep.lr_min);
    CHECK(u.lr <= cfg.sweep.lr_max);
    CHECK(u.lambda >= 0.5);
    CHECK(u.lambda <= 2.0);
    CHECK(u.beta >= 0.01);
    CHECK(u.beta <= 1.0);
    CHECK(u.seed == t);
    CHECK(to_json(sample_trial(cfg, t)) == to_json(u));
  }
  CHECK(sample_trial(cfg, 3).lr != sample_trial(cfg, 4).lr);
  RunConfig other = cfg;
  other.sweep.n_trials = 3;
  CHECK(to_json(sample_trial(other, 2)) == to_json(sample_trial(cfg, 2)));
  other.sweep.seed = 9;
  CHECK(sample_trial(other, 2).lr != sample_trial(cfg, 2).lr);

  SweepResult empty;
  empty.reference_utility = 0.5;
  const json j = to_json(empty, 0.95);
  CHECK(j.at("selected").is_null());
  CHECK(j.contains("reason"));
}

TEST_CASE("one-trial sweep reduces to unlearn plus evaluate") {
  RunConfig cfg = shared();
  cfg.adapters.top_fraction = 0.0;
  cfg.sweep.n_trials = 1;
  init_adapters(cfg);
  const SweepResult s = sweep(cfg);
  REQUIRE(s.candidates.size() == cfg.unlearn.epochs);
  RunConfig single = cfg;
  single.unlearn = sample_trial(cfg, 0);
  run_unlearning(single);
  const Evaluation e = evaluate_run(single);
  const MetricReport& last = s.candidates.back().report;
  CHECK(last.forget_quality == e.report.forget_quality);
  CHECK(last.know_utility == e.report.know_utility);
  CHECK(last.forget_nll == e.report.forget_nll);
  CHECK(s.reference_utility == e.reference_utility);
}

TEST_CASE("full pipeline is byte-reproducible") {
  std::string metrics[2], table[2];
  for (int k = 0; k < 2; ++k) {
    RunConfig cfg = tiny_config(scratch("e2e_" + std::to_string(k)));
    prepare(cfg);
    estimate_importance(cfg);
    init_adapters(cfg);
    run_unlearning(cfg);
    evaluate_run(cfg);
    sweep(cfg);
    const Layout L(cfg);
    metrics[k] = slurp(L.run_dir() / "metrics.json");
    table[k] = slurp(L.sweep_dir() / "candidates.csv");
    CHECK(fs::exists(L.sweep_dir() / "selection.json"));
  }
  CHECK(!metrics[0].empty());
  CHECK(metrics[0] == metrics[1]);
  CHECK(table[0] == table[1]);
}

TEST_CASE("verify-theorem writes the report bundle") {
  const RunConfig& cfg = shared();
  const json r = verify_theorem(cfg);
  for (const char* side : {"forget", "retain"}) {
    const json& s = r.at("sets").at(side);
    CHECK(s.at("term_norms").contains("dominance_ratio"));
    CHECK(s.at("covariance").at("cross").at("pairs").get<std::size_t>() > 0);
    CHECK(s.at("expectation_audit").size() == adaptable_names(cfg.model).size());
    CHECK(fs::exists(Layout(cfg).theorem_dir() / (std::string("cov_") + side + "_cross.csv")));
  }
  CHECK(r.at("map_fit").size() == adaptable_names(cfg.model).size());
  CHECK(r.at("stored_floats").at("lora").get<std::size_t>() ==
        analytic_stored_floats(cfg.model, Scope::kLora, cfg.adapters.rank));
}

TEST_CASE("stages report missing inputs") {
  const RunConfig cfg = tiny_config(scratch("missing"));
  CHECK_THROWS_AS(load_dataset(cfg), ContractError);
  gen_data(cfg);
  CHECK_THROWS_AS(estimate_importance(cfg), ContractError);
  CHECK_THROWS_AS(run_unlearning(cfg), ContractError);
}
