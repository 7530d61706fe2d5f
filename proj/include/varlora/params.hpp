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

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "varlora/tensor.hpp"

namespace varlora {

struct ModelConfig {
  std::size_t vocab_size = 256;
  std::size_t embed_dim = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t context_len = 32;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t head_dim() const { return embed_dim / n_heads; }
  bool operator==(const ModelConfig&) const = default;
  /// Equal in every field that shapes the network (the seed excluded).
  bool same_architecture(const ModelConfig& o) const {
    return vocab_size == o.vocab_size && embed_dim == o.embed_dim && n_layers == o.n_layers &&
           n_heads == o.n_heads && context_len == o.context_len;
  }
};

/// Model weights keyed by name. The name set is a function of the config.
///
/// Layout: tok_emb (V x d), pos_emb (T x d), per layer `layer{i}.` wq wk wv wo
/// (d x d), mlp1 (d x 4d), mlp2 (4d x d), ln1/ln2 gain+bias (1 x d), then
/// ln_f gain+bias and head (d x V). Linear maps act on row vectors: y = x W.
struct ParamSet {
  ModelConfig config;
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  std::size_t parameter_count() const;
  bool operator==(const ParamSet&) const = default;
};

/// Deterministic random initialization from config.seed.
ParamSet init_params(const ModelConfig& config);

/// Expected name -> shape map for a config.
std::map<std::string, std::vector<std::size_t>> param_shapes(const ModelConfig& config);

/// LoRA-eligible matrices in sorted order: attention, MLP and head weights.
std::vector<std::string> adaptable_names(const ModelConfig& config);
bool is_adaptable(const std::string& name);

std::string layer_prefix(std::size_t layer);

}  // namespace varlora
