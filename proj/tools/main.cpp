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

// Command-line front end for the unlearning pipeline.
//
//   varlora <command> [--config run.json] [--root DIR] [--set key.path=value]...
//
// The artifact root comes from --root, else the VILA_ARTIFACT_ROOT
// environment variable, else the config file, else ./artifacts.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "varlora/errors.hpp"
#include "varlora/pipeline.hpp"

using namespace varlora;
using nlohmann::json;

namespace {

struct Options {
  std::string config_path;
  std::string root;
  std::vector<std::string> overrides;
  std::string method;
  std::string scope;
  std::string loss;
  std::size_t trials = 0;
};

RunConfig resolve(const Options& o) {
  json j = json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    require(static_cast<bool>(in), "cannot open config " + o.config_path);
    j = json::parse(in);
  }
  if (const char* env = std::getenv("VILA_ARTIFACT_ROOT"); env && *env) j["root"] = env;
  std::vector<std::string> sets = o.overrides;
  if (!o.root.empty()) sets.push_back("root=\"" + o.root + "\"");
  if (!o.method.empty()) sets.push_back("adapters.method=\"" + o.method + "\"");
  if (!o.scope.empty()) sets.push_back("adapters.scope=\"" + o.scope + "\"");
  if (!o.loss.empty()) sets.push_back("unlearn.loss=\"" + o.loss + "\"");
  if (o.trials > 0) sets.push_back("sweep.n_trials=" + std::to_string(o.trials));
  return run_config_from_json(apply_overrides(j, sets));
}

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("-c,--config", o.config_path, "run configuration (JSON)");
  cmd->add_option("--root", o.root, "artifact root directory");
  cmd->add_option("--set", o.overrides, "override a config key, e.g. unlearn.lr=1e-3");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variance-weighted LoRA initialization for unlearning"};
  app.require_subcommand(1);
  Options o;

  auto* dump = app.add_subcommand("config", "print the resolved configuration");
  auto* gen = app.add_subcommand("gen-data", "generate the corpus and the forget/retain split");
  auto* train = app.add_subcommand("train", "train the base model on the full corpus");
  auto* retrain = app.add_subcommand("retrain", "train the oracle on the retain split only");
  auto* est = app.add_subcommand("estimate-importance", "gradient statistics and importance map");
  auto* init = app.add_subcommand("init-adapters", "weighted low-rank adapter initialization");
  auto* unl = app.add_subcommand("unlearn", "adapter-only unlearning with the base frozen");
  auto* eval = app.add_subcommand("evaluate", "forget quality and utility of the unlearned model");
  auto* sw = app.add_subcommand("sweep", "random search with utility-constrained selection");
  auto* thm = app.add_subcommand("verify-theorem", "checks of the variance factorization");
  for (CLI::App* c : {dump, gen, train, retrain, est, init, unl, eval, sw, thm}) add_common(c, o);
  est->add_option("--method", o.method, "fila | vila | expila | absila (fi = fila)");
  est->add_option("--scope", o.scope, "full | lora");
  init->add_option("--method", o.method, "map method to read");
  init->add_option("--scope", o.scope, "map scope to read");
  for (CLI::App* c : {unl, eval, sw}) {
    c->add_option("--loss", o.loss, "gd | npo | ihl");
    c->add_option("--method", o.method, "map method of the run");
    c->add_option("--scope", o.scope, "map scope of the run");
  }
  sw->add_option("--trials", o.trials, "number of random-search trials");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = resolve(o);
    const Layout L(cfg);
    if (*dump) {
      print(to_json(cfg));
    } else if (*gen) {
      gen_data(cfg);
      const Dataset d = load_dataset(cfg);
      print({{"examples", d.corpus.examples.size()},
             {"forget", d.forget.size()},
             {"retain", d.retain.size()},
             {"corpus", L.corpus().string()},
             {"split", L.split().string()}});
    } else if (*train || *retrain) {
      const TrainSummary s = train_model(cfg, static_cast<bool>(*retrain));
      print({{"final_loss", s.epoch_loss.back()},
             {"forget_nll", s.forget_nll},
             {"retain_nll", s.retain_nll},
             {"digest", s.digest},
             {"seconds", s.seconds}});
    } else if (*est) {
      const ImportanceSummary s = estimate_importance(cfg);
      print({{"dir", L.importance_dir().string()},
             {"stored_floats_per_side", s.stored_floats},
             {"analytic_floats_per_side", s.analytic_floats},
             {"seconds", s.seconds}});
    } else if (*init) {
      print(to_json(init_adapters(cfg)));
    } else if (*unl) {
      const UnlearnResult r = run_unlearning(cfg);
      print({{"dir", L.run_dir().string()}, {"steps", r.steps}, {"log", to_json(r.log)}});
    } else if (*eval) {
      const Evaluation e = evaluate_run(cfg);
      json j = to_json(e.report);
      j["reference_utility"] = e.reference_utility;
      print(j);
    } else if (*sw) {
      print(to_json(sweep(cfg), cfg.eval.utility_floor));
    } else if (*thm) {
      print(verify_theorem(cfg));
    }
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
