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

// Small causal transformer LM on the tape engine.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "varlora/autodiff.hpp"
#include "varlora/lora.hpp"
#include "varlora/optimizer.hpp"
#include "varlora/params.hpp"

namespace varlora {

/// One token sequence. answer_mask[i] = 1 marks token i as a scored answer
/// token; position i - 1 then carries a next-token target.
struct Example {
  std::vector<int> tokens;
  std::vector<std::uint8_t> answer_mask;
  int entity = -1;
  std::size_t id = 0;

  std::size_t target_count() const;
  /// Tokens before the first answer token.
  std::vector<int> prompt() const;
  /// Answer tokens in order.
  std::vector<int> answer() const;
};

void check_example(const ModelConfig& config, const Example& example);

/// Batch packed row-wise: example e occupies rows [offset[e], offset[e] + length[e]).
struct PackedBatch {
  std::vector<int> inputs;
  std::vector<int> positions;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  std::vector<int> example_of_row;
  std::vector<std::size_t> offset;
  std::vector<std::size_t> length;
  std::vector<std::size_t> target_count;

  std::size_t rows() const { return inputs.size(); }
  std::size_t examples() const { return offset.size(); }
};

PackedBatch pack(const ModelConfig& config, std::span<const Example> batch);

enum class GradScope { kWeights, kAdapters };

/// Parameters bound onto a tape, ready to build forward graphs.
class ModelTape {
 public:
  ModelTape(const ParamSet& params, const AdapterSet* adapters, GradScope scope);
  ModelTape(const ModelTape&) = delete;
  ModelTape& operator=(const ModelTape&) = delete;

  Tape& tape() { return tape_; }
  const ModelConfig& config() const { return config_; }

  /// Logits (rows x V) for a packed batch.
  Var logits(const PackedBatch& batch);

  /// Mean over examples of each example's mean masked NLL. Examples with an
  /// empty mask contribute 0.
  Var mean_nll(Var logits, const PackedBatch& batch);
  /// Per-example summed masked NLL, shape {B, 1}.
  Var sequence_nll(Var logits, const PackedBatch& batch);

  /// Gradients after tape().backward(). Weights scope returns every tensor.
  std::map<std::string, Tensor> weight_grads() const;
  AdapterGradMap adapter_grads() const;

 private:
  Var linear(Var x, const std::string& name);

  Tape tape_;
  ModelConfig config_;
  std::map<std::string, Var> weights_;
  std::map<std::string, std::pair<Var, Var>> adapters_;
};

struct Gradients {
  double loss = 0.0;
  std::map<std::string, Tensor> weights;
  AdapterGradMap adapters;
};

double forward_nll(const ParamSet& params, const AdapterSet* adapters,
                   std::span<const Example> batch);
/// Mean masked NLL of every example, in batch order.
std::vector<double> per_example_nll(const ParamSet& params, const AdapterSet* adapters,
                                    std::span<const Example> batch);
Tensor forward_logits(const ParamSet& params, const AdapterSet* adapters,
                      std::span<const Example> batch);

Gradients nll_gradients(const ParamSet& params, const AdapterSet* adapters,
                        std::span<const Example> batch, GradScope scope);
Gradients per_example_grad(const ParamSet& params, const AdapterSet* adapters,
                           const Example& example, GradScope scope);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 16;
  AdamConfig adam{.lr = 3e-3};
  std::uint64_t seed = 0;
};

struct TrainResult {
  ParamSet params;
  std::vector<double> epoch_loss;
};

/// Full-parameter training on the mean NLL. Zero epochs returns the input.
TrainResult train(const ParamSet& params, std::span<const Example> dataset,
                  const TrainConfig& config);

/// Argmax decoding, lowest token id on ties. Stops at max_new tokens or when
/// the context is full.
std::vector<int> generate_greedy(const ParamSet& params, const AdapterSet* adapters,
                                 std::span<const int> prompt, std::size_t max_new);

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax_lowest(std::span<const double> values);

}  // namespace varlora
