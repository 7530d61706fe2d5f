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

// Forget-quality and utility metrics plus the utility-constrained selection
// rule.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "varlora/lora.hpp"
#include "varlora/model.hpp"

namespace varlora {

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Asymptotic Kolmogorov survival function Q(lambda), clamped to [1e-300, 1].
double kolmogorov_q(double lambda);

KsResult ks_two_sample(std::span<const double> xs, std::span<const double> ys);

std::size_t lcs_length(std::span<const int> a, std::span<const int> b);
double rouge_l_f1(std::span<const int> candidate, std::span<const int> reference);

/// log10 p of the KS test between two per-example statistic samples.
double forget_quality_from_stats(std::span<const double> unlearned,
                                 std::span<const double> retrain);
double forget_quality(const ParamSet& unlearned, const ParamSet& retrain,
                      std::span<const Example> forget);

struct UtilityParts {
  double answer_prob = 0.0;
  double rouge = 0.0;
  double utility = 0.0;
};

double harmonic_mean(double a, double b);

/// Mean over examples of exp(-mean answer NLL), mean ROUGE-L F1 of greedy
/// continuations against the reference answers, and their harmonic mean.
UtilityParts model_utility(const ParamSet& params, std::span<const Example> eval_set);

/// Mean ROUGE-L F1 of greedy continuations of each prompt.
double mean_greedy_rouge(const ParamSet& params, std::span<const Example> examples);

struct MetricReport {
  double forget_quality = 0.0;
  double ks_statistic = 0.0;
  double ks_p_value = 1.0;
  double verb_mem = 0.0;
  double know_utility = 0.0;
  double answer_prob = 0.0;
  double retain_rouge = 0.0;
  double forget_nll = 0.0;
  double retain_nll = 0.0;
};

MetricReport evaluate_model(const ParamSet& model, const ParamSet& retrain,
                            std::span<const Example> forget, std::span<const Example> retain_eval);

nlohmann::json to_json(const MetricReport& r);
std::string metric_csv_header();
std::string metric_csv_row(const MetricReport& r);

/// Among candidates with utility >= 0.95 * u0, the index whose FQ is closest
/// to 0; earliest on ties. nullopt when none qualifies.
std::optional<std::size_t> select_best(std::span<const MetricReport> candidates, double u0,
                                       double floor_fraction = 0.95);

}  // namespace varlora
