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

// Streaming gradient moments and the importance estimators built on them.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "varlora/lora.hpp"
#include "varlora/model.hpp"
#include "varlora/tensor.hpp"

namespace varlora {

struct MomentAccumulator {
  Tensor sum_g;
  Tensor sum_g2;
  Tensor sum_abs;
  std::size_t n = 0;

  MomentAccumulator() = default;
  explicit MomentAccumulator(std::vector<std::size_t> shape);

  void add(const Tensor& grad);
  /// Equivalent to having added the other stream's samples to this one.
  void merge(const MomentAccumulator& other);
  const std::vector<std::size_t>& shape() const { return sum_g.shape(); }
};

MomentAccumulator accumulate(MomentAccumulator acc, const Tensor& grad);

/// E[g^2].
Tensor fisher(const MomentAccumulator& acc);
/// max(0, E[g^2] - E[g]^2), or the n-1 normalized version when unbiased.
Tensor variance(const MomentAccumulator& acc, bool unbiased = false);
/// |E[g]|.
Tensor exp_magnitude(const MomentAccumulator& acc);
/// E[|g|].
Tensor abs_magnitude(const MomentAccumulator& acc);
Tensor mean_gradient(const MomentAccumulator& acc);

/// Sum over k of varB(i,k) * varA(k,j).
Tensor lora_variance_approx(const Tensor& varB, const Tensor& varA);

enum class Method { kFila, kVila, kExpila, kAbsila };
enum class Scope { kFull, kLora };

std::string to_string(Method m);
std::string to_string(Scope s);
Method method_from_string(const std::string& s);
Scope scope_from_string(const std::string& s);

/// Elementwise statistic selected by a method tag.
Tensor moment_statistic(const MomentAccumulator& acc, Method method);

/// Full scope keys are weight names; lora scope keys are "<name>/B" and
/// "<name>/A".
struct StatsSet {
  Scope scope = Scope::kFull;
  std::size_t rank = 0;
  std::map<std::string, MomentAccumulator> moments;

  std::vector<std::string> matrices() const;
  std::size_t samples() const;
  /// Floats held across all accumulators (three tensors each).
  std::size_t stored_floats() const;
  void merge(const StatsSet& other);
};

std::string lora_key(const std::string& name, char factor);

/// Per-example gradients of every example folded into fresh accumulators.
/// Full scope tracks the adaptable weights (at W + BA when adapters are given);
/// lora scope tracks each adapter factor and requires adapters.
StatsSet collect_stats(const ParamSet& params, const AdapterSet* adapters,
                       std::span<const Example> examples, Scope scope);

/// Analytic float counts: 3 * sum(m*r + r*n) for lora, 3 * sum(m*n) for full.
std::size_t analytic_stored_floats(const ModelConfig& config, Scope scope, std::size_t rank);

struct ImportanceMap {
  Method method = Method::kVila;
  Scope scope = Scope::kLora;
  double eps = 1e-8;
  bool eps_relative = false;
  std::map<std::string, Tensor> values;

  std::vector<std::string> names() const;
};

/// Per-matrix view of a stats set under a method: the moment itself for full
/// scope, the product of the factor moments for lora scope.
std::map<std::string, Tensor> statistic_map(const StatsSet& stats, Method method);

/// With eps_relative the floor is eps times the per-matrix mean denominator,
/// which keeps it on the scale of the statistic (lora-scope products are
/// fourth order in the gradient).
ImportanceMap importance_map(const StatsSet& forget, const StatsSet& retain, Method method,
                             double eps = 1e-8, bool eps_relative = false);

/// Matrices by descending mean map value (ties by name), top ceil(f * count).
std::vector<std::string> rank_layers(const ImportanceMap& map, double top_fraction);

void save_stats(const StatsSet& stats, const std::filesystem::path& path);
StatsSet load_stats(const std::filesystem::path& path);
void save_importance_map(const ImportanceMap& map, const std::filesystem::path& path);
ImportanceMap load_importance_map(const std::filesystem::path& path);

}  // namespace varlora
