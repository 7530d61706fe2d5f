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

#include "varlora/params.hpp"

#include <random>

#include "varlora/errors.hpp"

namespace varlora {

void ModelConfig::validate() const {
  require(vocab_size >= 2, "vocab_size must be >= 2");
  require(context_len >= 2, "context_len must be >= 2");
  require(embed_dim >= 1 && n_heads >= 1 && n_layers >= 1, "model dims must be positive");
  require(embed_dim % n_heads == 0, "embed_dim must be divisible by n_heads");
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = tensors.find(name);
  require(it != tensors.end(), "unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = tensors.find(name);
  require(it != tensors.end(), "unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors) n += t.size();
  return n;
}

std::string layer_prefix(std::size_t layer) { return "layer" + std::to_string(layer) + "."; }

std::map<std::string, std::vector<std::size_t>> param_shapes(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.embed_dim, v = c.vocab_size;
  std::map<std::string, std::vector<std::size_t>> s;
  s["tok_emb"] = {v, d};
  s["pos_emb"] = {c.context_len, d};
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = layer_prefix(l);
    for (const char* w : {"wq", "wk", "wv", "wo"}) s[p + w] = {d, d};
    s[p + "mlp1"] = {d, 4 * d};
    s[p + "mlp2"] = {4 * d, d};
    for (const char* ln : {"ln1", "ln2"}) {
      s[p + ln + ".gain"] = {1, d};
      s[p + ln + ".bias"] = {1, d};
    }
  }
  s["ln_f.gain"] = {1, d};
  s["ln_f.bias"] = {1, d};
  s["head"] = {d, v};
  return s;
}

bool is_adaptable(const std::string& name) {
  if (name == "head") return true;
  for (const char* suffix : {".wq", ".wk", ".wv", ".wo", ".mlp1", ".mlp2"}) {
    const std::string s(suffix);
    if (name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0)
      return true;
  }
  return false;
}

std::vector<std::string> adaptable_names(const ModelConfig& config) {
  std::vector<std::string> out;
  for (const auto& [name, _] : param_shapes(config))
    if (is_adaptable(name)) out.push_back(name);
  return out;
}

ParamSet init_params(const ModelConfig& config) {
  ParamSet p;
  p.config = config;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (const auto& [name, shape] : param_shapes(config)) {
    Tensor t(shape);
    if (name.ends_with(".gain")) {
      for (double& v : t.raw()) v = 1.0;
    } else if (!name.ends_with(".bias")) {
      for (double& v : t.raw()) v = normal(rng);
    }
    p.tensors.emplace(name, std::move(t));
  }
  return p;
}

}  // namespace varlora
