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

// Weighted low-rank approximation and the adapter initialization built on it.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "varlora/grad_stats.hpp"
#include "varlora/lora.hpp"
#include "varlora/params.hpp"
#include "varlora/tensor.hpp"

namespace varlora {

struct WlraConfig {
  std::size_t rank = 8;
  std::size_t max_iters = 50;
  double rel_tol = 1e-6;
  double ridge = 1e-10;

  void validate() const;
};

struct WlraResult {
  Tensor B;
  Tensor A;
  /// Objective after the SVD start and after every accepted or rejected
  /// half-step; never increases.
  std::vector<double> trace;
  std::size_t iterations = 0;
  std::size_t skipped_solves = 0;
  std::size_t rejected_half_steps = 0;
};

/// sum_ij (M_ij (W - B A)_ij)^2.
double wlra_objective(const Tensor& W, const Tensor& M, const Tensor& B, const Tensor& A);

/// Alternating weighted ridge least squares from the rank-r truncated SVD.
WlraResult solve_wlra(const Tensor& W, const Tensor& M, const WlraConfig& config);

/// Best rank-r approximation factors (B = U S^1/2, A = S^1/2 V^T).
std::pair<Tensor, Tensor> truncated_svd_factors(const Tensor& W, std::size_t rank);

/// W - B A.
Tensor split_base(const Tensor& W, const Tensor& B, const Tensor& A);

struct MatrixInitReport {
  std::string name;
  bool selected = false;
  std::string status;  // wlra | standard | zero_map_fallback
  std::vector<double> trace;
  double residual_norm = 0.0;
  double weighted_residual = 0.0;
  double mean_importance = 0.0;
};

struct UnlearnInit {
  ParamSet base;
  AdapterSet adapters;
  std::vector<MatrixInitReport> report;
};

/// Matrices picked by rank_layers(map, top_fraction) get B*, A* from WLRA and
/// a base of W - B*A*; the rest get plain LoRA init. top_fraction = 0 means
/// plain LoRA everywhere.
UnlearnInit initialize_for_unlearning(const ParamSet& params, const ImportanceMap& map,
                                      const WlraConfig& config, double top_fraction,
                                      double sigma, std::uint64_t seed);

nlohmann::json to_json(const std::vector<MatrixInitReport>& report);

}  // namespace varlora
