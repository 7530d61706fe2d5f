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

#include "varlora/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "varlora/errors.hpp"

namespace varlora {

double kolmogorov_q(double lambda) {
  // Below 0.2 the alternating series needs many terms and Q differs from 1
  // by less than 1e-12.
  if (lambda < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k < 100000; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-12) break;
  }
  return std::clamp(sum, 1e-300, 1.0);
}

KsResult ks_two_sample(std::span<const double> xs, std::span<const double> ys) {
  require(!xs.empty() && !ys.empty(), "ks_two_sample: empty sample");
  std::vector<double> a(xs.begin(), xs.end()), b(ys.begin(), ys.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  const double ne = na * nb / (na + nb);
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  return {d, kolmogorov_q(lambda)};
}

std::size_t lcs_length(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_f1(std::span<const int> candidate, std::span<const int> reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

double forget_quality_from_stats(std::span<const double> unlearned,
                                 std::span<const double> retrain) {
  return std::log10(ks_two_sample(unlearned, retrain).p_value);
}

double forget_quality(const ParamSet& unlearned, const ParamSet& retrain,
                      std::span<const Example> forget) {
  require(unlearned.config.same_architecture(retrain.config), "forget_quality: model architectures differ");
  const auto a = per_example_nll(unlearned, nullptr, forget);
  const auto b = per_example_nll(retrain, nullptr, forget);
  return forget_quality_from_stats(a, b);
}

double harmonic_mean(double a, double b) {
  if (a <= 0.0 || b <= 0.0) return 0.0;
  return 2.0 * a * b / (a + b);
}

double mean_greedy_rouge(const ParamSet& params, std::span<const Example> examples) {
  require(!examples.empty(), "rouge over an empty set");
  double total = 0.0;
  for (const Example& ex : examples) {
    const auto answer = ex.answer();
    const auto out = generate_greedy(params, nullptr, ex.prompt(), answer.size());
    total += rouge_l_f1(out, answer);
  }
  return total / static_cast<double>(examples.size());
}

UtilityParts model_utility(const ParamSet& params, std::span<const Example> eval_set) {
  require(!eval_set.empty(), "model_utility: empty eval set");
  UtilityParts u;
  const auto nll = per_example_nll(params, nullptr, eval_set);
  for (double v : nll) u.answer_prob += std::exp(-v);
  u.answer_prob /= static_cast<double>(nll.size());
  u.rouge = mean_greedy_rouge(params, eval_set);
  u.utility = harmonic_mean(u.answer_prob, u.rouge);
  return u;
}

MetricReport evaluate_model(const ParamSet& model, const ParamSet& retrain,
                            std::span<const Example> forget,
                            std::span<const Example> retain_eval) {
  MetricReport r;
  const auto fm = per_example_nll(model, nullptr, forget);
  const auto fr = per_example_nll(retrain, nullptr, forget);
  const KsResult ks = ks_two_sample(fm, fr);
  r.ks_statistic = ks.statistic;
  r.ks_p_value = ks.p_value;
  r.forget_quality = std::log10(ks.p_value);
  r.verb_mem = mean_greedy_rouge(model, forget);
  const UtilityParts u = model_utility(model, retain_eval);
  r.know_utility = u.utility;
  r.answer_prob = u.answer_prob;
  r.retain_rouge = u.rouge;
  for (double v : fm) r.forget_nll += v / static_cast<double>(fm.size());
  r.retain_nll = forward_nll(model, nullptr, retain_eval);
  return r;
}

nlohmann::json to_json(const MetricReport& r) {
  return {{"forget_quality", r.forget_quality}, {"ks_statistic", r.ks_statistic},
          {"ks_p_value", r.ks_p_value},         {"verb_mem", r.verb_mem},
          {"know_utility", r.know_utility},     {"answer_prob", r.answer_prob},
          {"retain_rouge", r.retain_rouge},     {"forget_nll", r.forget_nll},
          {"retain_nll", r.retain_nll}};
}

std::string metric_csv_header() {
  return "forget_quality,ks_statistic,ks_p_value,verb_mem,know_utility,answer_prob,"
         "retain_rouge,forget_nll,retain_nll";
}

std::string metric_csv_row(const MetricReport& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.forget_quality << ',' << r.ks_statistic << ',' << r.ks_p_value << ',' << r.verb_mem
     << ',' << r.know_utility << ',' << r.answer_prob << ',' << r.retain_rouge << ','
     << r.forget_nll << ',' << r.retain_nll;
  return os.str();
}

std::optional<std::size_t> select_best(std::span<const MetricReport> candidates, double u0,
                                       double floor_fraction) {
  require(!candidates.empty(), "select_best: no candidates");
  require(u0 > 0.0, "select_best: original utility must be > 0");
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].know_utility < floor_fraction * u0) continue;
    if (!best || candidates[i].forget_quality > candidates[*best].forget_quality) best = i;
  }
  return best;
}

}  // namespace varlora
