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

// Empirical checks of the assumptions behind the low-rank variance
// factorization: term magnitudes, cross/self covariance concentration,
// expectation-to-variance ratios and the fit of the factorized map.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "varlora/grad_stats.hpp"
#include "varlora/lora.hpp"
#include "varlora/model.hpp"

namespace varlora {

enum class SamplingMode { kPerExample, kMinibatch };

struct SamplingConfig {
  SamplingMode mode = SamplingMode::kPerExample;
  std::size_t minibatch_size = 8;
  std::size_t n_draws = 500;
  std::uint64_t seed = 0;
  /// Also fold full weight gradients of every draw into a full-scope StatsSet.
  bool full_oracle = false;
};

struct FactorInstance {
  Tensor gB;
  Tensor gA;
};

/// Draws taken at one frozen parameter point. instances[name][d] is draw d.
struct GradientInstanceSet {
  SamplingMode mode = SamplingMode::kPerExample;
  std::size_t minibatch_size = 1;
  std::size_t n_draws = 0;
  std::map<std::string, std::vector<FactorInstance>> instances;
  StatsSet lora_stats;
  StatsSet full_stats;
};

/// Per-example mode walks a seeded permutation, reshuffling after each pass;
/// minibatch mode draws minibatch_size distinct examples per draw.
GradientInstanceSet sample_instances(const ParamSet& params, const AdapterSet& probe,
                                     std::span<const Example> dataset,
                                     const SamplingConfig& config);

/// Builds an instance set from explicit factor gradients (synthetic streams).
GradientInstanceSet instances_from(const std::map<std::string, std::vector<FactorInstance>>& draws);

struct TermNorms {
  double b0a0 = 0.0;
  double db_a0 = 0.0;
  double b0_da = 0.0;
  double db_da = 0.0;

  /// ||dB dA|| over the largest of the other three terms.
  double dominance_ratio() const;
};

/// Mean Frobenius norms over draws and matrices.
TermNorms term_norms(const GradientInstanceSet& set, const AdapterSet& probe);

enum class CovKind { kCross, kSelfB, kSelfA };
std::string to_string(CovKind k);

struct CovarianceSummary {
  CovKind kind = CovKind::kCross;
  std::size_t pairs = 0;
  double mean_abs_cov = 0.0;
  /// Mean over pairs of the element variances (both elements pooled).
  double mean_variance = 0.0;
  /// Mean over pairs of sqrt(var_u var_v).
  double mean_geo_variance = 0.0;
  /// mean_abs_cov / mean_variance.
  double concentration = 0.0;
  /// mean_abs_cov / mean_geo_variance; equals the mean |correlation| scale.
  double scaled_concentration = 0.0;
  double positive_fraction = 0.0;
  std::vector<double> bin_edges;
  std::vector<std::size_t> counts;

  std::string histogram_csv() const;
};

/// Population covariances over sampled element pairs: cross pairs B(i,k) with
/// A(k',j); self pairs are distinct elements of one factor. Every pair is used
/// when a matrix has at most budget / n_matrices of them.
CovarianceSummary covariance_summary(const GradientInstanceSet& set, CovKind kind,
                                     std::size_t pair_budget = 100000, std::uint64_t seed = 0,
                                     std::size_t bins = 41);

struct AuditEntry {
  std::string name;
  double median = 0.0;
  double p90 = 0.0;
  std::size_t flagged = 0;
  std::size_t elements = 0;
};

/// Elementwise (E g)^2 / Var g over the B and A draws of every matrix; zero
/// variance elements are flagged and excluded.
std::vector<AuditEntry> expectation_audit(const GradientInstanceSet& set);

double spearman(std::span<const double> x, std::span<const double> y);

struct FitEntry {
  std::string name;
  double spearman = 0.0;
  double log_ratio_mean = 0.0;
  double log_ratio_median = 0.0;
  double log_ratio_max_abs = 0.0;
  std::size_t compared = 0;
};

std::vector<FitEntry> factorization_fit(const std::map<std::string, Tensor>& approx,
                                        const std::map<std::string, Tensor>& oracle,
                                        double eps = 1e-30);

nlohmann::json to_json(const TermNorms& t);
nlohmann::json to_json(const CovarianceSummary& c);
nlohmann::json to_json(const std::vector<AuditEntry>& a);
nlohmann::json to_json(const std::vector<FitEntry>& f);

}  // namespace varlora
