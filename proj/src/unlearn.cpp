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

#include "varlora/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "varlora/errors.hpp"

namespace varlora {

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kGd: return "gd";
    case LossKind::kNpo: return "npo";
    case LossKind::kIhl: return "ihl";
  }
  return "?";
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "gd") return LossKind::kGd;
  if (s == "npo") return LossKind::kNpo;
  if (s == "ihl") return LossKind::kIhl;
  throw ContractError("unknown loss '" + s + "'");
}

void UnlearnConfig::validate() const {
  require(lambda >= 0.0, "lambda must be >= 0");
  require(loss != LossKind::kNpo || beta > 0.0, "npo needs beta > 0");
  require(lr >= 0.0, "learning rate must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
}

std::vector<double> sequence_logprobs(const ParamSet& params, const AdapterSet* adapters,
                                      std::span<const Example> batch) {
  const PackedBatch b = pack(params.config, batch);
  ModelTape mt(params, adapters, GradScope::kWeights);
  const Tensor& seq = mt.tape().value(mt.sequence_nll(mt.logits(b), b));
  std::vector<double> out(b.examples());
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = -seq[e];
  return out;
}

double ihl_hinge(std::span<const double> probs, int target) {
  require(probs.size() >= 2, "ihl needs at least two tokens");
  const auto y = static_cast<std::size_t>(target);
  std::size_t best = y == 0 ? 1 : 0;
  for (std::size_t v = 0; v < probs.size(); ++v)
    if (v != y && probs[v] > probs[best]) best = v;
  return 1.0 + probs[y] - probs[best];
}

double npo_term(double logp, double logp_ref, double beta) {
  const double z = -beta * (logp - logp_ref);
  // log sigmoid(z) = -log1p(exp(-z)), written to avoid overflow.
  const double log_sig = z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
  return -(2.0 / beta) * log_sig;
}

namespace {

Var forget_term(ModelTape& mt, const UnlearnConfig& cfg, const PackedBatch& f,
                std::span<const double> ref_logprobs) {
  Tape& t = mt.tape();
  Var logits = mt.logits(f);
  switch (cfg.loss) {
    case LossKind::kGd:
      return scale(mt.mean_nll(logits, f), -1.0);
    case LossKind::kNpo: {
      require(ref_logprobs.size() == f.examples(), "npo needs one reference log-prob per example");
      // -beta (logp - logp_ref) = beta (seq_nll + logp_ref)
      Var seq = mt.sequence_nll(logits, f);
      Var ref = t.constant(Tensor({f.examples(), 1}, {ref_logprobs.begin(), ref_logprobs.end()}));
      Var ls = log_sigmoid(scale(add(seq, ref), cfg.beta));
      return scale(sum(ls), -2.0 / (cfg.beta * static_cast<double>(f.examples())));
    }
    case LossKind::kIhl: {
      Var probs = softmax_rows(logits, false);
      const Tensor& p = t.value(probs);
      const std::size_t V = p.cols();
      require(V >= 2, "ihl needs at least two tokens");
      std::vector<int> other(f.rows(), 0), seg(f.rows(), -1);
      std::size_t masked = 0;
      for (std::size_t i = 0; i < f.rows(); ++i) {
        if (!f.mask[i]) continue;
        const auto y = static_cast<std::size_t>(f.targets[i]);
        std::size_t best = y == 0 ? 1 : 0;
        for (std::size_t v = 0; v < V; ++v)
          if (v != y && p(i, v) > p(i, best)) best = v;
        other[i] = static_cast<int>(best);
        seg[i] = 0;
        ++masked;
      }
      if (masked == 0) return t.constant(Tensor({1}));
      Var hinge = sub(gather_cols(probs, f.targets), gather_cols(probs, other));
      const std::vector<double> w(f.rows(), 1.0 / static_cast<double>(masked));
      Var avg = reshape(segment_sum(hinge, seg, w, 1), {1});
      return add(avg, t.constant(Tensor({1}, {1.0})));
    }
  }
  throw ContractError("unknown loss");
}

}  // namespace

Var unlearn_loss(ModelTape& mt, const UnlearnConfig& cfg, const PackedBatch& forget,
                 const PackedBatch& retain, std::span<const double> ref_logprobs,
                 LossTerms* terms) {
  cfg.validate();
  Var f = forget_term(mt, cfg, forget, ref_logprobs);
  Var r = mt.mean_nll(mt.logits(retain), retain);
  Var total = add(f, scale(r, cfg.lambda));
  if (terms) {
    terms->forget = mt.tape().value(f).item();
    terms->retain = mt.tape().value(r).item();
    terms->total = mt.tape().value(total).item();
  }
  return total;
}

namespace {

std::vector<double> ref_for(const ParamSet* ref, const UnlearnConfig& cfg,
                            std::span<const Example> forget) {
  if (cfg.loss != LossKind::kNpo) return {};
  require(ref != nullptr, "npo needs a reference model");
  return sequence_logprobs(*ref, nullptr, forget);
}

}  // namespace

LossTerms evaluate_loss(const ParamSet& base, const AdapterSet* adapters, const ParamSet* ref,
                        std::span<const Example> forget, std::span<const Example> retain,
                        const UnlearnConfig& cfg) {
  const auto lp = ref_for(ref, cfg, forget);
  const PackedBatch f = pack(base.config, forget), r = pack(base.config, retain);
  ModelTape mt(base, adapters, GradScope::kWeights);
  LossTerms terms;
  unlearn_loss(mt, cfg, f, r, lp, &terms);
  return terms;
}

std::pair<LossTerms, AdapterGradMap> loss_adapter_grads(const ParamSet& base,
                                                        const AdapterSet& adapters,
                                                        const ParamSet* ref,
                                                        std::span<const Example> forget,
                                                        std::span<const Example> retain,
                                                        const UnlearnConfig& cfg) {
  const auto lp = ref_for(ref, cfg, forget);
  const PackedBatch f = pack(base.config, forget), r = pack(base.config, retain);
  ModelTape mt(base, &adapters, GradScope::kAdapters);
  LossTerms terms;
  Var loss = unlearn_loss(mt, cfg, f, r, lp, &terms);
  mt.tape().backward(loss);
  return {terms, mt.adapter_grads()};
}

UnlearnResult unlearn_run(const ParamSet& base, const AdapterSet& adapters, const ParamSet& ref,
                          std::span<const Example> forget, std::span<const Example> retain,
                          const UnlearnConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  require(!forget.empty() && !retain.empty(), "unlearn_run needs forget and retain examples");
  check_adapters(base, adapters);
  const std::vector<double> ref_all = ref_for(&ref, cfg, forget);

  UnlearnResult res;
  res.adapters = adapters;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> forder(forget.size()), rorder(retain.size());
  std::iota(forder.begin(), forder.end(), 0);
  std::iota(rorder.begin(), rorder.end(), 0);
  std::shuffle(rorder.begin(), rorder.end(), rng);
  std::size_t rpos = 0;

  const std::size_t per_epoch = (forget.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = per_epoch * cfg.epochs;
  AdamConfig adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;
  adam.schedule = cfg.schedule;
  AdamW opt(adam);

  auto log_now = [&](std::size_t step, double loss) {
    res.log.push_back({step, forward_nll(base, &res.adapters, forget),
                       forward_nll(base, &res.adapters, retain), loss});
  };
  log_now(0, std::nan(""));

  std::vector<Example> fb, rb;
  std::vector<double> fref;
  double last_loss = std::nan("");
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(forder.begin(), forder.end(), rng);
    for (std::size_t s = 0; s < per_epoch; ++s) {
      fb.clear();
      rb.clear();
      fref.clear();
      const std::size_t end = std::min(forget.size(), (s + 1) * cfg.batch_size);
      for (std::size_t i = s * cfg.batch_size; i < end; ++i) {
        fb.push_back(forget[forder[i]]);
        if (!ref_all.empty()) fref.push_back(ref_all[forder[i]]);
      }
      for (std::size_t i = 0; i < cfg.batch_size; ++i) {
        if (rpos == rorder.size()) {
          std::shuffle(rorder.begin(), rorder.end(), rng);
          rpos = 0;
        }
        rb.push_back(retain[rorder[rpos++]]);
      }
      const PackedBatch f = pack(base.config, fb), r = pack(base.config, rb);
      ModelTape mt(base, &res.adapters, GradScope::kAdapters);
      LossTerms terms;
      Var loss = unlearn_loss(mt, cfg, f, r, fref, &terms);
      if (!std::isfinite(terms.total)) {
        std::ostringstream os;
        os << "unlearning diverged at step " << res.steps << " (loss " << terms.total << ")";
        throw DivergenceError(os.str());
      }
      mt.tape().backward(loss);
      const AdapterGradMap g = mt.adapter_grads();
      opt.begin_step();
      const double lr = scheduled_lr(adam, res.steps, total);
      for (auto& [name, pair] : res.adapters) {
        opt.apply(name + "/B", pair.B, g.at(name).gB, lr, true);
        opt.apply(name + "/A", pair.A, g.at(name).gA, lr, true);
      }
      ++res.steps;
      last_loss = terms.total;
      if (cfg.eval_every > 0 && res.steps % cfg.eval_every == 0 && res.steps != total)
        log_now(res.steps, last_loss);
    }
    if (on_epoch) on_epoch(epoch, res.adapters);
  }
  if (res.steps > 0) log_now(res.steps, last_loss);
  res.merged = merge(base, res.adapters);
  return res;
}

std::string log_csv(const std::vector<LogRow>& log) {
  std::ostringstream os;
  os.precision(17);
  os << "step,forget_nll,retain_nll,loss\n";
  for (const LogRow& r : log)
    os << r.step << ',' << r.forget_nll << ',' << r.retain_nll << ',' << r.loss << '\n';
  return os.str();
}

nlohmann::json to_json(const std::vector<LogRow>& log) {
  nlohmann::json j = nlohmann::json::array();
  for (const LogRow& r : log) {
    nlohmann::json row{{"step", r.step}, {"forget_nll", r.forget_nll}, {"retain_nll", r.retain_nll}};
    row["loss"] = std::isfinite(r.loss) ? nlohmann::json(r.loss) : nlohmann::json(nullptr);
    j.push_back(row);
  }
  return j;
}

nlohmann::json to_json(const UnlearnConfig& c) {
  return {{"loss", to_string(c.loss)},
          {"lambda", c.lambda},
          {"beta", c.beta},
          {"lr", c.lr},
          {"schedule", c.schedule == Schedule::kLinear ? "linear" : "constant"},
          {"epochs", c.epochs},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"eval_every", c.eval_every},
          {"seed", c.seed}};
}

UnlearnConfig unlearn_config_from_json(const nlohmann::json& j) {
  UnlearnConfig c;
  if (j.contains("loss")) c.loss = loss_kind_from_string(j.at("loss"));
  c.lambda = j.value("lambda", c.lambda);
  c.beta = j.value("beta", c.beta);
  c.lr = j.value("lr", c.lr);
  if (j.contains("schedule")) {
    const std::string s = j.at("schedule");
    require(s == "linear" || s == "constant", "schedule must be linear or constant");
    c.schedule = s == "linear" ? Schedule::kLinear : Schedule::kConstant;
  }
  c.epochs = j.value("epochs", c.epochs);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

}  // namespace varlora
