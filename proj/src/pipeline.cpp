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

#include "varlora/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "varlora/checkpoint.hpp"
#include "varlora/errors.hpp"
#include "varlora/theorem_lab.hpp"

namespace varlora {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void require_file(const fs::path& path, const std::string& producer) {
  require(fs::exists(path), "missing " + path.string() + " (run " + producer + " first)");
}

// Rejects keys absent from the default serialization, recursively.
void check_keys(const json& given, const json& schema, const std::string& where) {
  if (!given.is_object() || !schema.is_object()) return;
  for (const auto& [key, value] : given.items()) {
    require(schema.contains(key), "unknown config key '" + where + key + "'");
    check_keys(value, schema.at(key), where + key + ".");
  }
}

std::string schedule_name(Schedule s) { return s == Schedule::kLinear ? "linear" : "constant"; }

Schedule schedule_from(const std::string& s) {
  require(s == "linear" || s == "constant", "schedule must be linear or constant");
  return s == "linear" ? Schedule::kLinear : Schedule::kConstant;
}

std::string fraction_tag(double f) {
  std::ostringstream os;
  os << f;
  return os.str();
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  require(model.vocab_size == corpus.vocab_size, "model.vocab_size must equal corpus.vocab_size");
  require(split.fraction > 0.0 && split.fraction < 1.0, "split.fraction must be in (0, 1)");
  require(train.epochs >= 1, "train.epochs must be >= 1");
  require(train.batch_size >= 1, "train.batch_size must be >= 1");
  require(adapters.rank >= 1, "adapters.rank must be >= 1");
  require(adapters.sigma > 0.0, "adapters.sigma must be > 0");
  require(adapters.top_fraction >= 0.0 && adapters.top_fraction <= 1.0,
          "adapters.top_fraction must be in [0, 1]");
  require(adapters.eps > 0.0, "adapters.eps must be > 0");
  require(wlra.rank == adapters.rank, "wlra.rank must equal adapters.rank");
  wlra.validate();
  unlearn.validate();
  require(eval.retain_eval >= 1, "eval.retain_eval must be >= 1");
  require(eval.utility_floor > 0.0 && eval.utility_floor <= 1.0,
          "eval.utility_floor must be in (0, 1]");
  require(sweep.n_trials >= 1, "sweep.n_trials must be >= 1");
  require(sweep.lr_min > 0.0 && sweep.lr_min <= sweep.lr_max, "sweep lr range invalid");
  require(sweep.lambda_min >= 0.0 && sweep.lambda_min <= sweep.lambda_max,
          "sweep lambda range invalid");
  require(sweep.beta_min > 0.0 && sweep.beta_min <= sweep.beta_max, "sweep beta range invalid");
  require(theorem.per_example_draws >= 2 && theorem.minibatch_draws >= 2,
          "theorem draw counts must be >= 2");
  require(theorem.sigma > 0.0, "theorem.sigma must be > 0");
}

json to_json(const RunConfig& c) {
  return {
      {"corpus",
       {{"seed", c.corpus.seed},
        {"n_entities", c.corpus.n_entities},
        {"qa_per_entity", c.corpus.qa_per_entity},
        {"templates", c.corpus.templates},
        {"vocab_size", c.corpus.vocab_size}}},
      {"split",
       {{"mode", to_string(c.split.mode)}, {"fraction", c.split.fraction}, {"seed", c.split.seed}}},
      {"model", to_json(c.model)},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"lr", c.train.adam.lr},
        {"weight_decay", c.train.adam.weight_decay},
        {"schedule", schedule_name(c.train.adam.schedule)},
        {"seed", c.train.seed}}},
      {"adapters",
       {{"rank", c.adapters.rank},
        {"sigma", c.adapters.sigma},
        {"top_fraction", c.adapters.top_fraction},
        {"method", to_string(c.adapters.method)},
        {"scope", to_string(c.adapters.scope)},
        {"eps", c.adapters.eps},
        {"eps_relative", c.adapters.eps_relative},
        {"probe_seed", c.adapters.probe_seed},
        {"init_seed", c.adapters.init_seed}}},
      {"wlra",
       {{"rank", c.wlra.rank},
        {"max_iters", c.wlra.max_iters},
        {"rel_tol", c.wlra.rel_tol},
        {"ridge", c.wlra.ridge}}},
      {"unlearn", to_json(c.unlearn)},
      {"eval", {{"retain_eval", c.eval.retain_eval}, {"utility_floor", c.eval.utility_floor}}},
      {"sweep",
       {{"n_trials", c.sweep.n_trials},
        {"seed", c.sweep.seed},
        {"lr_min", c.sweep.lr_min},
        {"lr_max", c.sweep.lr_max},
        {"lambda_min", c.sweep.lambda_min},
        {"lambda_max", c.sweep.lambda_max},
        {"beta_min", c.sweep.beta_min},
        {"beta_max", c.sweep.beta_max}}},
      {"theorem",
       {{"rank", c.theorem.rank},
        {"sigma", c.theorem.sigma},
        {"per_example_draws", c.theorem.per_example_draws},
        {"minibatch_draws", c.theorem.minibatch_draws},
        {"minibatch_size", c.theorem.minibatch_size},
        {"pair_budget", c.theorem.pair_budget},
        {"seed", c.theorem.seed}}},
      {"root", c.root.string()},
  };
}

RunConfig run_config_from_json(const json& j) {
  require(j.is_object(), "run config must be a JSON object");
  RunConfig c;
  check_keys(j, to_json(c), "");
  const json e = json::object();
  const json& co = j.value("corpus", e);
  c.corpus.seed = co.value("seed", c.corpus.seed);
  c.corpus.n_entities = co.value("n_entities", c.corpus.n_entities);
  c.corpus.qa_per_entity = co.value("qa_per_entity", c.corpus.qa_per_entity);
  c.corpus.templates = co.value("templates", c.corpus.templates);
  c.corpus.vocab_size = co.value("vocab_size", c.corpus.vocab_size);
  const json& sp = j.value("split", e);
  if (sp.contains("mode")) c.split.mode = split_mode_from_string(sp.at("mode"));
  c.split.fraction = sp.value("fraction", c.split.fraction);
  c.split.seed = sp.value("seed", c.split.seed);
  if (j.contains("model")) {
    json m = to_json(c.model);
    m.update(j.at("model"));
    c.model = model_config_from_json(m);
  }
  const json& tr = j.value("train", e);
  c.train.epochs = tr.value("epochs", c.train.epochs);
  c.train.batch_size = tr.value("batch_size", c.train.batch_size);
  c.train.adam.lr = tr.value("lr", c.train.adam.lr);
  c.train.adam.weight_decay = tr.value("weight_decay", c.train.adam.weight_decay);
  if (tr.contains("schedule")) c.train.adam.schedule = schedule_from(tr.at("schedule"));
  c.train.seed = tr.value("seed", c.train.seed);
  const json& ad = j.value("adapters", e);
  c.adapters.rank = ad.value("rank", c.adapters.rank);
  c.adapters.sigma = ad.value("sigma", c.adapters.sigma);
  c.adapters.top_fraction = ad.value("top_fraction", c.adapters.top_fraction);
  if (ad.contains("method")) c.adapters.method = method_from_string(ad.at("method"));
  if (ad.contains("scope")) c.adapters.scope = scope_from_string(ad.at("scope"));
  c.adapters.eps = ad.value("eps", c.adapters.eps);
  c.adapters.eps_relative = ad.value("eps_relative", c.adapters.eps_relative);
  c.adapters.probe_seed = ad.value("probe_seed", c.adapters.probe_seed);
  c.adapters.init_seed = ad.value("init_seed", c.adapters.init_seed);
  const json& wl = j.value("wlra", e);
  // The solver rank follows the adapter rank unless set explicitly.
  c.wlra.rank = wl.value("rank", c.adapters.rank);
  c.wlra.max_iters = wl.value("max_iters", c.wlra.max_iters);
  c.wlra.rel_tol = wl.value("rel_tol", c.wlra.rel_tol);
  c.wlra.ridge = wl.value("ridge", c.wlra.ridge);
  c.unlearn = unlearn_config_from_json(j.value("unlearn", e));
  const json& ev = j.value("eval", e);
  c.eval.retain_eval = ev.value("retain_eval", c.eval.retain_eval);
  c.eval.utility_floor = ev.value("utility_floor", c.eval.utility_floor);
  const json& sw = j.value("sweep", e);
  c.sweep.n_trials = sw.value("n_trials", c.sweep.n_trials);
  c.sweep.seed = sw.value("seed", c.sweep.seed);
  c.sweep.lr_min = sw.value("lr_min", c.sweep.lr_min);
  c.sweep.lr_max = sw.value("lr_max", c.sweep.lr_max);
  c.sweep.lambda_min = sw.value("lambda_min", c.sweep.lambda_min);
  c.sweep.lambda_max = sw.value("lambda_max", c.sweep.lambda_max);
  c.sweep.beta_min = sw.value("beta_min", c.sweep.beta_min);
  c.sweep.beta_max = sw.value("beta_max", c.sweep.beta_max);
  const json& th = j.value("theorem", e);
  c.theorem.rank = th.value("rank", c.theorem.rank);
  c.theorem.sigma = th.value("sigma", c.theorem.sigma);
  c.theorem.per_example_draws = th.value("per_example_draws", c.theorem.per_example_draws);
  c.theorem.minibatch_draws = th.value("minibatch_draws", c.theorem.minibatch_draws);
  c.theorem.minibatch_size = th.value("minibatch_size", c.theorem.minibatch_size);
  c.theorem.pair_budget = th.value("pair_budget", c.theorem.pair_budget);
  c.theorem.seed = th.value("seed", c.theorem.seed);
  c.root = j.value("root", c.root.string());
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ContractError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

json apply_overrides(json j, const std::vector<std::string>& assignments) {
  for (const std::string& a : assignments) {
    const auto eq = a.find('=');
    require(eq != std::string::npos && eq > 0, "override '" + a + "' is not key=value");
    const std::string key = a.substr(0, eq), text = a.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    json* node = &j;
    std::size_t start = 0;
    for (;;) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
      require(!part.empty(), "override key '" + key + "' has an empty component");
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      if (!node->contains(part)) (*node)[part] = json::object();
      node = &(*node)[part];
      start = dot + 1;
    }
  }
  return j;
}

Layout::Layout(const RunConfig& cfg) : root(cfg.root) {
  const AdapterSettings& a = cfg.adapters;
  importance_tag = to_string(a.method) + "-" + to_string(a.scope);
  run_tag = a.top_fraction == 0.0 ? "lora"
                                  : importance_tag + "-top" + fraction_tag(a.top_fraction);
  run_tag += "-" + to_string(cfg.unlearn.loss);
}

void save_resolved_config(const RunConfig& cfg, const fs::path& artifact) {
  write_json(artifact.string() + ".config.json", to_json(cfg));
}

Dataset load_dataset(const RunConfig& cfg) {
  const Layout L(cfg);
  require_file(L.corpus(), "gen-data");
  require_file(L.split(), "gen-data");
  Dataset d;
  d.corpus = read_corpus(L.corpus());
  require(d.corpus.spec == cfg.corpus, "corpus on disk was generated from a different spec");
  d.split = read_split(L.split());
  d.forget = select(d.corpus, d.split.forget);
  d.retain = select(d.corpus, d.split.retain);
  const std::size_t k = std::min(cfg.eval.retain_eval, d.retain.size());
  for (std::size_t i = 0; i < k; ++i) d.retain_eval.push_back(d.retain[i * d.retain.size() / k]);
  return d;
}

void gen_data(const RunConfig& cfg) {
  const Layout L(cfg);
  const Corpus corpus = generate(cfg.corpus);
  require(corpus.vocab.size() <= cfg.model.vocab_size, "vocabulary exceeds model.vocab_size");
  fs::create_directories(L.corpus().parent_path());
  write_corpus(corpus, L.corpus());
  write_corpus_text(corpus, L.corpus_text());
  write_split(split(corpus, cfg.split.mode, cfg.split.fraction, cfg.split.seed), L.split());
  save_resolved_config(cfg, L.split());
}

TrainSummary train_model(const RunConfig& cfg, bool retrain_only) {
  const auto t0 = std::chrono::steady_clock::now();
  const Layout L(cfg);
  const Dataset d = load_dataset(cfg);
  const std::vector<Example>& data = retrain_only ? d.retain : d.corpus.examples;
  TrainResult r = train(init_params(cfg.model), data, cfg.train);
  const fs::path out = retrain_only ? L.retrain() : L.base();
  fs::create_directories(out.parent_path());
  save_checkpoint(r.params, out);
  save_resolved_config(cfg, out);
  TrainSummary s;
  s.epoch_loss = r.epoch_loss;
  s.forget_nll = forward_nll(r.params, nullptr, d.forget);
  s.retain_nll = forward_nll(r.params, nullptr, d.retain);
  s.digest = file_digest(out);
  std::ostringstream csv;
  csv.precision(17);
  csv << "epoch,loss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) csv << e << ',' << r.epoch_loss[e] << '\n';
  write_text(out.string() + ".loss.csv", csv.str());
  write_json(out.string() + ".summary.json", {{"forget_nll", s.forget_nll},
                                              {"retain_nll", s.retain_nll},
                                              {"digest", s.digest}});
  s.seconds = seconds_since(t0);
  write_json(out.string() + ".timing.json", {{"seconds", s.seconds}});
  return s;
}

ImportanceSummary estimate_importance(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const Layout L(cfg);
  const Dataset d = load_dataset(cfg);
  require_file(L.base(), "train");
  const ParamSet base = load_checkpoint(L.base());
  const AdapterSettings& a = cfg.adapters;
  StatsSet forget, retain;
  if (a.scope == Scope::kLora) {
    const AdapterSet probe = init_gaussian_probe(base.config, a.rank, a.sigma, a.probe_seed);
    forget = collect_stats(base, &probe, d.forget, Scope::kLora);
    retain = collect_stats(base, &probe, d.retain, Scope::kLora);
  } else {
    forget = collect_stats(base, nullptr, d.forget, Scope::kFull);
    retain = collect_stats(base, nullptr, d.retain, Scope::kFull);
  }
  const ImportanceMap map = importance_map(forget, retain, a.method, a.eps, a.eps_relative);
  const fs::path dir = L.importance_dir();
  fs::create_directories(dir);
  save_stats(forget, dir / "forget.stats");
  save_stats(retain, dir / "retain.stats");
  save_importance_map(map, dir / "map.bin");
  save_resolved_config(cfg, dir / "map.bin");

  ImportanceSummary s;
  s.stored_floats = forget.stored_floats();
  s.analytic_floats = analytic_stored_floats(base.config, a.scope, a.rank);
  s.samples_forget = forget.samples();
  s.samples_retain = retain.samples();
  json layers = json::array();
  for (const std::string& name : rank_layers(map, 1.0)) layers.push_back(name);
  write_json(dir / "report.json", {{"method", to_string(a.method)},
                                   {"scope", to_string(a.scope)},
                                   {"stored_floats_per_side", s.stored_floats},
                                   {"analytic_floats_per_side", s.analytic_floats},
                                   {"samples_forget", s.samples_forget},
                                   {"samples_retain", s.samples_retain},
                                   {"layers_by_importance", layers}});
  s.seconds = seconds_since(t0);
  write_json(dir / "timing.json", {{"seconds", s.seconds}});
  return s;
}

std::vector<MatrixInitReport> init_adapters(const RunConfig& cfg) {
  const Layout L(cfg);
  require_file(L.base(), "train");
  const ParamSet base = load_checkpoint(L.base());
  const AdapterSettings& a = cfg.adapters;
  UnlearnInit init;
  if (a.top_fraction == 0.0) {
    init.base = base;
    init.adapters = init_standard(base.config, a.rank, a.init_seed, a.sigma);
    for (const std::string& name : adaptable_names(base.config))
      init.report.push_back({name, false, "standard", {}, 0.0, 0.0, 0.0});
  } else {
    require_file(L.importance_dir() / "map.bin", "estimate-importance");
    const ImportanceMap map = load_importance_map(L.importance_dir() / "map.bin");
    init = initialize_for_unlearning(base, map, cfg.wlra, a.top_fraction, a.sigma, a.init_seed);
  }
  const fs::path dir = L.run_dir();
  fs::create_directories(dir);
  save_checkpoint(init.base, dir / "init_base.ckpt");
  save_adapters(init.adapters, dir / "init_adapters.bin");
  save_resolved_config(cfg, dir / "init_adapters.bin");
  write_json(dir / "init_report.json", to_json(init.report));
  return init.report;
}

UnlearnResult run_unlearning(const RunConfig& cfg) {
  const Layout L(cfg);
  const Dataset d = load_dataset(cfg);
  const fs::path dir = L.run_dir();
  require_file(dir / "init_adapters.bin", "init-adapters");
  const ParamSet ref = load_checkpoint(L.base());
  const ParamSet base = load_checkpoint(dir / "init_base.ckpt");
  const AdapterSet adapters = load_adapters(dir / "init_adapters.bin");
  UnlearnResult r = unlearn_run(base, adapters, ref, d.forget, d.retain, cfg.unlearn);
  save_adapters(r.adapters, dir / "adapters.bin");
  save_checkpoint(r.merged, dir / "unlearned.ckpt");
  save_resolved_config(cfg, dir / "unlearned.ckpt");
  write_text(dir / "log.csv", log_csv(r.log));
  write_json(dir / "log.json", to_json(r.log));
  return r;
}

Evaluation evaluate_run(const RunConfig& cfg) {
  const Layout L(cfg);
  const Dataset d = load_dataset(cfg);
  const fs::path dir = L.run_dir();
  require_file(dir / "unlearned.ckpt", "unlearn");
  require_file(L.retrain(), "retrain");
  const ParamSet retrain = load_checkpoint(L.retrain());
  const ParamSet original = load_checkpoint(L.base());
  Evaluation ev;
  ev.report = evaluate_model(load_checkpoint(dir / "unlearned.ckpt"), retrain, d.forget,
                             d.retain_eval);
  ev.reference_utility = model_utility(original, d.retain_eval).utility;
  json j = to_json(ev.report);
  j["reference_utility"] = ev.reference_utility;
  j["meets_utility_floor"] =
      ev.report.know_utility >= cfg.eval.utility_floor * ev.reference_utility;
  write_json(dir / "metrics.json", j);
  write_text(dir / "metrics.csv", metric_csv_header() + "\n" + metric_csv_row(ev.report) + "\n");
  save_resolved_config(cfg, dir / "metrics.json");
  return ev;
}

UnlearnConfig sample_trial(const RunConfig& cfg, std::size_t trial) {
  const SweepSettings& s = cfg.sweep;
  std::mt19937_64 rng(s.seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  // Three draws per trial from one stream keeps trial k independent of n_trials.
  double x[3] = {0.0, 0.0, 0.0};
  for (std::size_t t = 0; t <= trial; ++t)
    for (double& v : x) v = u(rng);
  UnlearnConfig c = cfg.unlearn;
  c.lr = std::exp(std::log(s.lr_min) + x[0] * (std::log(s.lr_max) - std::log(s.lr_min)));
  c.lambda = s.lambda_min + x[1] * (s.lambda_max - s.lambda_min);
  c.beta = s.beta_min + x[2] * (s.beta_max - s.beta_min);
  c.seed = cfg.unlearn.seed + trial;
  return c;
}

SweepResult sweep(const RunConfig& cfg) {
  const Layout L(cfg);
  const Dataset d = load_dataset(cfg);
  const fs::path dir = L.run_dir();
  require_file(dir / "init_adapters.bin", "init-adapters");
  require_file(L.retrain(), "retrain");
  const ParamSet ref = load_checkpoint(L.base());
  const ParamSet base = load_checkpoint(dir / "init_base.ckpt");
  const AdapterSet adapters = load_adapters(dir / "init_adapters.bin");
  const ParamSet retrain = load_checkpoint(L.retrain());

  SweepResult r;
  r.reference_utility = model_utility(ref, d.retain_eval).utility;
  std::vector<AdapterSet> states;
  for (std::size_t t = 0; t < cfg.sweep.n_trials; ++t) {
    const UnlearnConfig uc = sample_trial(cfg, t);
    try {
      unlearn_run(base, adapters, ref, d.forget, d.retain, uc,
                  [&](std::size_t epoch, const AdapterSet& a) {
                    const ParamSet merged = merge(base, a);
                    r.candidates.push_back(
                        {t, epoch + 1, uc, evaluate_model(merged, retrain, d.forget, d.retain_eval)});
                    states.push_back(a);
                  });
    } catch (const DivergenceError&) {
      // A diverged trial contributes only the epochs it finished.
    }
  }
  std::vector<MetricReport> reports;
  for (const Candidate& c : r.candidates) reports.push_back(c.report);
  r.selected = select_best(reports, r.reference_utility, cfg.eval.utility_floor);

  const fs::path sdir = L.sweep_dir();
  fs::create_directories(sdir);
  write_text(sdir / "candidates.csv", candidates_csv(r));
  write_json(sdir / "selection.json", to_json(r, cfg.eval.utility_floor));
  save_resolved_config(cfg, sdir / "selection.json");
  if (r.selected) {
    save_adapters(states[*r.selected], sdir / "selected_adapters.bin");
    save_checkpoint(merge(base, states[*r.selected]), sdir / "selected.ckpt");
  }
  return r;
}

std::string candidates_csv(const SweepResult& r) {
  std::ostringstream os;
  os.precision(17);
  os << "trial,epoch,lr,lambda,beta," << metric_csv_header() << '\n';
  for (const Candidate& c : r.candidates)
    os << c.trial << ',' << c.epoch << ',' << c.config.lr << ',' << c.config.lambda << ','
       << c.config.beta << ',' << metric_csv_row(c.report) << '\n';
  return os.str();
}

json to_json(const SweepResult& r, double floor_fraction) {
  json j = {{"reference_utility", r.reference_utility},
            {"utility_floor", floor_fraction * r.reference_utility},
            {"candidates", r.candidates.size()}};
  if (!r.selected) {
    j["selected"] = nullptr;
    j["reason"] = "no candidate meets the utility floor";
    return j;
  }
  const Candidate& c = r.candidates[*r.selected];
  j["selected"] = {{"index", *r.selected},
                   {"trial", c.trial},
                   {"epoch", c.epoch},
                   {"unlearn", to_json(c.config)},
                   {"metrics", to_json(c.report)}};
  return j;
}

json verify_theorem(const RunConfig& cfg) {
  const Layout L(cfg);
  const Dataset d = load_dataset(cfg);
  require_file(L.base(), "train");
  const ParamSet base = load_checkpoint(L.base());
  const TheoremSettings& t = cfg.theorem;
  const AdapterSet probe = init_gaussian_probe(base.config, t.rank, t.sigma, cfg.adapters.probe_seed);
  const fs::path dir = L.theorem_dir();
  fs::create_directories(dir);

  json report = {{"rank", t.rank}, {"sigma", t.sigma}};
  SamplingConfig pe;
  pe.n_draws = t.per_example_draws;
  pe.seed = t.seed;
  pe.full_oracle = true;
  json sides = json::object();
  std::map<std::string, GradientInstanceSet> per_example;
  for (const auto& [side, data] :
       {std::pair<std::string, const std::vector<Example>*>{"forget", &d.forget},
        {"retain", &d.retain}}) {
    per_example.emplace(side, sample_instances(base, probe, *data, pe));
    const GradientInstanceSet& set = per_example.at(side);
    json s;
    s["term_norms"] = to_json(term_norms(set, probe));
    s["expectation_audit"] = to_json(expectation_audit(set));
    const auto approx = statistic_map(set.lora_stats, Method::kVila);
    const auto oracle = statistic_map(set.full_stats, Method::kVila);
    s["variance_fit"] = to_json(factorization_fit(approx, oracle));

    SamplingConfig mb;
    mb.mode = SamplingMode::kMinibatch;
    mb.minibatch_size = std::min(t.minibatch_size, data->size());
    mb.n_draws = t.minibatch_draws;
    mb.seed = t.seed + 1;
    const GradientInstanceSet mset = sample_instances(base, probe, *data, mb);
    json cov = json::object();
    for (CovKind k : {CovKind::kCross, CovKind::kSelfB, CovKind::kSelfA}) {
      const CovarianceSummary c = covariance_summary(mset, k, t.pair_budget, t.seed);
      cov[to_string(k)] = to_json(c);
      write_text(dir / ("cov_" + side + "_" + to_string(k) + ".csv"), c.histogram_csv());
    }
    s["covariance"] = cov;
    s["minibatch_expectation_audit"] = to_json(expectation_audit(mset));
    sides[side] = s;
  }
  report["sets"] = sides;

  const GradientInstanceSet& f = per_example.at("forget");
  const GradientInstanceSet& r = per_example.at("retain");
  const AdapterSettings& a = cfg.adapters;
  const ImportanceMap lora = importance_map(f.lora_stats, r.lora_stats, Method::kVila, a.eps, a.eps_relative);
  const ImportanceMap full = importance_map(f.full_stats, r.full_stats, Method::kVila, a.eps, a.eps_relative);
  report["map_fit"] = to_json(factorization_fit(lora.values, full.values));
  report["eps"] = a.eps;
  report["eps_relative"] = a.eps_relative;
  report["stored_floats"] = {
      {"lora", analytic_stored_floats(base.config, Scope::kLora, a.rank)},
      {"full", analytic_stored_floats(base.config, Scope::kFull, a.rank)}};
  write_json(dir / "report.json", report);
  save_resolved_config(cfg, dir / "report.json");
  return report;
}

}  // namespace varlora
