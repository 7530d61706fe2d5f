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

#include "varlora/params.hpp"
#include "varlora/tensor.hpp"

namespace varlora {

struct Example;

/// Low-rank factors for one m x n weight matrix: delta W = B A with
/// B (m x r) and A (r x n). No alpha/r scaling is applied.
struct AdapterPair {
  Tensor B;
  Tensor A;
  double sigma = 0.0;

  std::size_t rank() const { return B.cols(); }
  Tensor delta() const { return matmul(B, A); }
  bool operator==(const AdapterPair&) const = default;
};

using AdapterSet = std::map<std::string, AdapterPair>;

struct AdapterGrad {
  Tensor gB;
  Tensor gA;
};
using AdapterGradMap = std::map<std::string, AdapterGrad>;

/// Probe initialization: every entry of B and A drawn i.i.d. N(0, sigma^2).
/// Matrices are visited in sorted name order, B before A.
AdapterSet init_gaussian_probe(const ModelConfig& config, std::size_t rank, double sigma,
                               std::uint64_t seed);
AdapterSet init_gaussian_probe(const ModelConfig& config, const std::vector<std::string>& names,
                               std::size_t rank, double sigma, std::uint64_t seed);

/// Plain LoRA: B = 0, A ~ N(0, sigma^2); the model function is unchanged.
AdapterSet init_standard(const ModelConfig& config, std::size_t rank, std::uint64_t seed,
                         double sigma = 0.05);
AdapterPair init_standard_pair(std::size_t m, std::size_t n, std::size_t rank, double sigma,
                               std::uint64_t seed);

/// Each adapted matrix becomes W + B A.
ParamSet merge(const ParamSet& params, const AdapterSet& adapters);

/// Validates adapter shapes against the params; throws ShapeError.
void check_adapters(const ParamSet& params, const AdapterSet& adapters);

/// Exact gradients of one example's NLL w.r.t. every B and A, base frozen.
AdapterGradMap adapter_grads(const ParamSet& params, const AdapterSet& adapters,
                             const Example& example);

}  // namespace varlora
