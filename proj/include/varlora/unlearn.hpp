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

// Unlearning objectives and the adapter-only optimization loop.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "varlora/lora.hpp"
#include "varlora/model.hpp"
#include "varlora/optimizer.hpp"

namespace varlora {

enum class LossKind { kGd, kNpo, kIhl };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

struct UnlearnConfig {
  LossKind loss = LossKind::kIhl;
  double lambda = 1.0;
  double beta = 0.1;
  double lr = 1e-4;
  Schedule schedule = Schedule::kLinear;
  std::size_t epochs = 5;
  double weight_decay = 0.01;
  std::size_t batch_size = 4;
  /// Log every this many steps; 0 logs only the start and the end.
  std::size_t eval_every = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossTerms {
  double forget = 0.0;
  double retain = 0.0;
  double total = 0.0;
};

/// Summed masked log-probability of each example's answer under params.
std::vector<double> sequence_logprobs(const ParamSet& params, const AdapterSet* adapters,
                                      std::span<const Example> batch);

/// Builds the objective on a tape. ref_logprobs must hold one entry per forget
/// example for NPO and is ignored otherwise.
Var unlearn_loss(ModelTape& mt, const UnlearnConfig& cfg, const PackedBatch& forget,
                 const PackedBatch& retain, std::span<const double> ref_logprobs,
                 LossTerms* terms = nullptr);

/// Value of the objective; ref is required for NPO.
LossTerms evaluate_loss(const ParamSet& base, const AdapterSet* adapters, const ParamSet* ref,
                        std::span<const Example> forget, std::span<const Example> retain,
                        const UnlearnConfig& cfg);

/// Objective value and its gradients with respect to every adapter factor.
std::pair<LossTerms, AdapterGradMap> loss_adapter_grads(const ParamSet& base,
                                                        const AdapterSet& adapters,
                                                        const ParamSet* ref,
                                                        std::span<const Example> forget,
                                                        std::span<const Example> retain,
                                                        const UnlearnConfig& cfg);

/// Hinge 1 + p_y - max_{v != y} p_v for one probability row; ties in the
/// maximum go to the lowest id.
double ihl_hinge(std::span<const double> probs, int target);

/// -(2/beta) log sigmoid(-beta (logp - logp_ref)).
double npo_term(double logp, double logp_ref, double beta);

struct LogRow {
  std::size_t step = 0;
  double forget_nll = 0.0;
  double retain_nll = 0.0;
  double loss = 0.0;
};

struct UnlearnResult {
  AdapterSet adapters;
  ParamSet merged;
  std::vector<LogRow> log;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, const AdapterSet& adapters)>;

/// Optimizes only the adapters with the base frozen. Each step takes one
/// forget batch (reshuffled per epoch) and the next retain batch in a cyclic
/// shuffled order. Throws DivergenceError on a non-finite loss.
UnlearnResult unlearn_run(const ParamSet& base, const AdapterSet& adapters, const ParamSet& ref,
                          std::span<const Example> forget, std::span<const Example> retain,
                          const UnlearnConfig& cfg, const EpochCallback& on_epoch = {});

std::string log_csv(const std::vector<LogRow>& log);
nlohmann::json to_json(const std::vector<LogRow>& log);
nlohmann::json to_json(const UnlearnConfig& cfg);
UnlearnConfig unlearn_config_from_json(const nlohmann::json& j);

}  // namespace varlora
