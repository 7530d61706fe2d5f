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

#include "varlora/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "varlora/errors.hpp"

namespace varlora {

std::size_t Example::target_count() const {
  std::size_t n = 0;
  for (std::size_t i = 1; i < answer_mask.size(); ++i) n += answer_mask[i] ? 1 : 0;
  return n;
}

std::vector<int> Example::prompt() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < tokens.size() && !answer_mask[i]; ++i) out.push_back(tokens[i]);
  return out;
}

std::vector<int> Example::answer() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (answer_mask[i]) out.push_back(tokens[i]);
  return out;
}

void check_example(const ModelConfig& config, const Example& ex) {
  require(ex.tokens.size() == ex.answer_mask.size(), "example mask length mismatch");
  require(ex.tokens.size() >= 2, "example needs at least two tokens");
  require(ex.tokens.size() - 1 <= config.context_len,
          "example longer than context (" + std::to_string(ex.tokens.size()) + " tokens)");
  for (int t : ex.tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= config.vocab_size)
      throw IndexError("token id " + std::to_string(t) + " outside vocabulary");
}

PackedBatch pack(const ModelConfig& config, std::span<const Example> batch) {
  require(!batch.empty(), "empty batch");
  PackedBatch p;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const Example& ex = batch[e];
    check_example(config, ex);
    const std::size_t len = ex.tokens.size() - 1;
    p.offset.push_back(p.inputs.size());
    p.length.push_back(len);
    std::size_t count = 0;
    for (std::size_t t = 0; t < len; ++t) {
      p.inputs.push_back(ex.tokens[t]);
      p.positions.push_back(static_cast<int>(t));
      p.targets.push_back(ex.tokens[t + 1]);
      p.mask.push_back(ex.answer_mask[t + 1]);
      p.example_of_row.push_back(static_cast<int>(e));
      count += ex.answer_mask[t + 1] ? 1 : 0;
    }
    p.target_count.push_back(count);
  }
  return p;
}

ModelTape::ModelTape(const ParamSet& params, const AdapterSet* adapters, GradScope scope)
    : config_(params.config) {
  config_.validate();
  const bool weight_grads = scope == GradScope::kWeights;
  for (const auto& [name, t] : params.tensors) weights_[name] = tape_.leaf(t, weight_grads);
  if (adapters) {
    check_adapters(params, *adapters);
    const bool adapter_grads = scope == GradScope::kAdapters;
    for (const auto& [name, pair] : *adapters)
      adapters_[name] = {tape_.leaf(pair.B, adapter_grads), tape_.leaf(pair.A, adapter_grads)};
  } else {
    require(scope == GradScope::kWeights, "adapter gradients requested without adapters");
  }
}

Var ModelTape::linear(Var x, const std::string& name) {
  Var y = matmul(x, weights_.at(name));
  auto it = adapters_.find(name);
  if (it == adapters_.end()) return y;
  return add(y, matmul(matmul(x, it->second.first), it->second.second));
}

Var ModelTape::logits(const PackedBatch& b) {
  const std::size_t heads = config_.n_heads, hd = config_.head_dim();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Var h = add(embedding(weights_.at("tok_emb"), b.inputs),
              embedding(weights_.at("pos_emb"), b.positions));
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = layer_prefix(l);
    Var a = layer_norm(h, weights_.at(p + "ln1.gain"), weights_.at(p + "ln1.bias"));
    Var q = linear(a, p + "wq");
    Var k = linear(a, p + "wk");
    Var v = linear(a, p + "wv");
    std::vector<Var> per_example;
    per_example.reserve(b.examples());
    for (std::size_t e = 0; e < b.examples(); ++e) {
      const std::size_t r0 = b.offset[e], r1 = r0 + b.length[e];
      Var qe = slice_rows(q, r0, r1), ke = slice_rows(k, r0, r1), ve = slice_rows(v, r0, r1);
      std::vector<Var> per_head;
      per_head.reserve(heads);
      for (std::size_t hh = 0; hh < heads; ++hh) {
        const std::size_t c0 = hh * hd, c1 = c0 + hd;
        Var scores = scale(matmul(slice_cols(qe, c0, c1), transpose(slice_cols(ke, c0, c1))),
                           att_scale);
        per_head.push_back(matmul(softmax_rows(scores, true), slice_cols(ve, c0, c1)));
      }
      per_example.push_back(heads == 1 ? per_head[0] : concat_cols(per_head));
    }
    Var attn = per_example.size() == 1 ? per_example[0] : concat_rows(per_example);
    h = add(h, linear(attn, p + "wo"));
    Var m = layer_norm(h, weights_.at(p + "ln2.gain"), weights_.at(p + "ln2.bias"));
    h = add(h, linear(gelu(linear(m, p + "mlp1")), p + "mlp2"));
  }
  Var hf = layer_norm(h, weights_.at("ln_f.gain"), weights_.at("ln_f.bias"));
  return linear(hf, "head");
}

Var ModelTape::mean_nll(Var logits, const PackedBatch& b) {
  Var rows = cross_entropy_rows(logits, b.targets);
  std::vector<int> seg(b.rows(), -1);
  std::vector<double> w(b.rows(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(b.examples());
  for (std::size_t i = 0; i < b.rows(); ++i) {
    if (!b.mask[i]) continue;
    seg[i] = 0;
    w[i] = inv_b / static_cast<double>(b.target_count[b.example_of_row[i]]);
  }
  return reshape(segment_sum(rows, seg, w, 1), {1});
}

Var ModelTape::sequence_nll(Var logits, const PackedBatch& b) {
  Var rows = cross_entropy_rows(logits, b.targets);
  std::vector<int> seg(b.rows(), -1);
  std::vector<double> w(b.rows(), 1.0);
  for (std::size_t i = 0; i < b.rows(); ++i)
    if (b.mask[i]) seg[i] = b.example_of_row[i];
  return segment_sum(rows, seg, w, b.examples());
}

std::map<std::string, Tensor> ModelTape::weight_grads() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : weights_) out.emplace(name, tape_.grad(v));
  return out;
}

AdapterGradMap ModelTape::adapter_grads() const {
  AdapterGradMap out;
  for (const auto& [name, bv] : adapters_)
    out.emplace(name, AdapterGrad{tape_.grad(bv.first), tape_.grad(bv.second)});
  return out;
}

double forward_nll(const ParamSet& params, const AdapterSet* adapters,
                   std::span<const Example> batch) {
  const PackedBatch b = pack(params.config, batch);
  ModelTape mt(params, adapters, GradScope::kWeights);
  return mt.tape().value(mt.mean_nll(mt.logits(b), b)).item();
}

std::vector<double> per_example_nll(const ParamSet& params, const AdapterSet* adapters,
                                    std::span<const Example> batch) {
  const PackedBatch b = pack(params.config, batch);
  ModelTape mt(params, adapters, GradScope::kWeights);
  const Tensor& seq = mt.tape().value(mt.sequence_nll(mt.logits(b), b));
  std::vector<double> out(b.examples(), 0.0);
  for (std::size_t e = 0; e < out.size(); ++e)
    if (b.target_count[e] > 0) out[e] = seq[e] / static_cast<double>(b.target_count[e]);
  return out;
}

Tensor forward_logits(const ParamSet& params, const AdapterSet* adapters,
                      std::span<const Example> batch) {
  const PackedBatch b = pack(params.config, batch);
  ModelTape mt(params, adapters, GradScope::kWeights);
  return mt.tape().value(mt.logits(b));
}

Gradients nll_gradients(const ParamSet& params, const AdapterSet* adapters,
                        std::span<const Example> batch, GradScope scope) {
  const PackedBatch b = pack(params.config, batch);
  ModelTape mt(params, adapters, scope);
  Var loss = mt.mean_nll(mt.logits(b), b);
  mt.tape().backward(loss);
  Gradients g;
  g.loss = mt.tape().value(loss).item();
  if (scope == GradScope::kWeights)
    g.weights = mt.weight_grads();
  else
    g.adapters = mt.adapter_grads();
  return g;
}

Gradients per_example_grad(const ParamSet& params, const AdapterSet* adapters,
                           const Example& example, GradScope scope) {
  return nll_gradients(params, adapters, std::span<const Example>(&example, 1), scope);
}

namespace {

bool decays(const std::string& name) {
  return !name.ends_with(".gain") && !name.ends_with(".bias");
}

}  // namespace

TrainResult train(const ParamSet& params, std::span<const Example> dataset,
                  const TrainConfig& config) {
  TrainResult result{params, {}};
  if (config.epochs == 0) return result;
  require(!dataset.empty(), "train: empty dataset");
  require(config.batch_size >= 1, "train: batch_size must be >= 1");
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t per_epoch = (dataset.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total = per_epoch * config.epochs;
  AdamW opt(config.adam);
  std::size_t step = 0;
  std::vector<Example> batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < per_epoch; ++s, ++step) {
      batch.clear();
      const std::size_t end = std::min(dataset.size(), (s + 1) * config.batch_size);
      for (std::size_t i = s * config.batch_size; i < end; ++i) batch.push_back(dataset[order[i]]);
      Gradients g = nll_gradients(result.params, nullptr, batch, GradScope::kWeights);
      if (!std::isfinite(g.loss)) {
        std::ostringstream os;
        os << "training diverged at epoch " << epoch << " step " << step << " (loss " << g.loss
           << ")";
        throw DivergenceError(os.str());
      }
      loss_sum += g.loss;
      opt.begin_step();
      const double lr = scheduled_lr(config.adam, step, total);
      for (auto& [name, t] : result.params.tensors)
        opt.apply(name, t, g.weights.at(name), lr, decays(name));
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(per_epoch));
  }
  return result;
}

std::size_t argmax_lowest(std::span<const double> values) {
  require(!values.empty(), "argmax of empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::vector<int> generate_greedy(const ParamSet& params, const AdapterSet* adapters,
                                 std::span<const int> prompt, std::size_t max_new) {
  const ModelConfig& c = params.config;
  require(!prompt.empty(), "generate_greedy: empty prompt");
  require(prompt.size() < c.context_len + 1, "generate_greedy: prompt longer than context");
  std::vector<int> seq(prompt.begin(), prompt.end());
  std::vector<int> out;
  while (out.size() < max_new && seq.size() <= c.context_len) {
    Example ex;
    ex.tokens = seq;
    ex.tokens.push_back(0);  // dummy target keeps the packing rules uniform
    ex.answer_mask.assign(ex.tokens.size(), 0);
    const Tensor logits = forward_logits(params, adapters, std::span<const Example>(&ex, 1));
    const std::size_t last = logits.rows() - 1;
    const auto row = logits.values().subspan(last * logits.cols(), logits.cols());
    const int next = static_cast<int>(argmax_lowest(row));
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

}  // namespace varlora
