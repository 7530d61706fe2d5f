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

#include "varlora/theorem_lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "varlora/errors.hpp"

namespace varlora {

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + mid));
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void add_draw(GradientInstanceSet& set, const AdapterGradMap& g) {
  for (const auto& [name, gg] : g) {
    set.instances[name].push_back({gg.gB, gg.gA});
    set.lora_stats.moments.at(lora_key(name, 'B')).add(gg.gB);
    set.lora_stats.moments.at(lora_key(name, 'A')).add(gg.gA);
  }
}

}  // namespace

GradientInstanceSet sample_instances(const ParamSet& params, const AdapterSet& probe,
                                     std::span<const Example> dataset,
                                     const SamplingConfig& config) {
  require(config.n_draws >= 2, "sample_instances needs at least two draws");
  require(!dataset.empty(), "sample_instances: empty dataset");
  require(!probe.empty(), "sample_instances: no probe adapters");
  const bool mb = config.mode == SamplingMode::kMinibatch;
  require(!mb || (config.minibatch_size >= 1 && config.minibatch_size <= dataset.size()),
          "dataset smaller than the minibatch size");

  GradientInstanceSet set;
  set.mode = config.mode;
  set.minibatch_size = mb ? config.minibatch_size : 1;
  set.n_draws = config.n_draws;
  set.lora_stats.scope = Scope::kLora;
  set.lora_stats.rank = probe.begin()->second.rank();
  for (const auto& [name, p] : probe) {
    set.lora_stats.moments.emplace(lora_key(name, 'B'), MomentAccumulator(p.B.shape()));
    set.lora_stats.moments.emplace(lora_key(name, 'A'), MomentAccumulator(p.A.shape()));
  }
  set.full_stats.scope = Scope::kFull;
  if (config.full_oracle)
    for (const auto& [name, _] : probe)
      set.full_stats.moments.emplace(name, MomentAccumulator(params.at(name).shape()));

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t pos = order.size();
  std::vector<Example> batch;
  for (std::size_t d = 0; d < config.n_draws; ++d) {
    batch.clear();
    if (mb) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i = 0; i < config.minibatch_size; ++i) batch.push_back(dataset[order[i]]);
    } else {
      if (pos == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        pos = 0;
      }
      batch.push_back(dataset[order[pos++]]);
    }
    add_draw(set, nll_gradients(params, &probe, batch, GradScope::kAdapters).adapters);
    if (config.full_oracle) {
      const Gradients gw = nll_gradients(params, &probe, batch, GradScope::kWeights);
      for (auto& [name, acc] : set.full_stats.moments) acc.add(gw.weights.at(name));
    }
  }
  return set;
}

GradientInstanceSet instances_from(
    const std::map<std::string, std::vector<FactorInstance>>& draws) {
  require(!draws.empty(), "instances_from: no matrices");
  GradientInstanceSet set;
  set.lora_stats.scope = Scope::kLora;
  set.n_draws = draws.begin()->second.size();
  for (const auto& [name, list] : draws) {
    require(list.size() == set.n_draws, "instances_from: draw counts differ");
    require(!list.empty(), "instances_from: empty draw list");
    set.lora_stats.rank = list.front().gB.cols();
    MomentAccumulator b(list.front().gB.shape()), a(list.front().gA.shape());
    for (const FactorInstance& f : list) {
      b.add(f.gB);
      a.add(f.gA);
    }
    set.lora_stats.moments.emplace(lora_key(name, 'B'), std::move(b));
    set.lora_stats.moments.emplace(lora_key(name, 'A'), std::move(a));
  }
  set.instances = draws;
  return set;
}

double TermNorms::dominance_ratio() const {
  const double other = std::max({b0a0, db_a0, b0_da});
  return other > 0.0 ? db_da / other : std::numeric_limits<double>::infinity();
}

TermNorms term_norms(const GradientInstanceSet& set, const AdapterSet& probe) {
  require(!set.instances.empty(), "term_norms: no instances");
  TermNorms t;
  std::size_t count = 0;
  for (const auto& [name, list] : set.instances) {
    const AdapterPair& p = probe.at(name);
    const double base = frobenius_norm(matmul(p.B, p.A));
    for (const FactorInstance& f : list) {
      t.b0a0 += base;
      t.db_a0 += frobenius_norm(matmul(f.gB, p.A));
      t.b0_da += frobenius_norm(matmul(p.B, f.gA));
      t.db_da += frobenius_norm(matmul(f.gB, f.gA));
      ++count;
    }
  }
  const double inv = 1.0 / static_cast<double>(count);
  t.b0a0 *= inv;
  t.db_a0 *= inv;
  t.b0_da *= inv;
  t.db_da *= inv;
  return t;
}

std::string to_string(CovKind k) {
  switch (k) {
    case CovKind::kCross: return "cross";
    case CovKind::kSelfB: return "self_B";
    case CovKind::kSelfA: return "self_A";
  }
  return "?";
}

CovarianceSummary covariance_summary(const GradientInstanceSet& set, CovKind kind,
                                     std::size_t pair_budget, std::uint64_t seed,
                                     std::size_t bins) {
  require(set.n_draws >= 2, "covariance_summary needs at least two draws");
  require(pair_budget >= 1 && bins >= 1, "covariance_summary: empty budget");
  CovarianceSummary s;
  s.kind = kind;
  std::mt19937_64 rng(seed);
  const std::size_t per_matrix = std::max<std::size_t>(1, pair_budget / set.instances.size());
  const double inv_n = 1.0 / static_cast<double>(set.n_draws);
  std::vector<double> covs;
  double sum_var = 0.0, sum_geo = 0.0;

  for (const auto& [name, list] : set.instances) {
    // Element streams of the two factors, stored column-major by element.
    const std::size_t nb = list.front().gB.size(), na = list.front().gA.size();
    auto column = [&](bool from_b, std::size_t e) {
      std::vector<double> v(list.size());
      for (std::size_t d = 0; d < list.size(); ++d) v[d] = from_b ? list[d].gB[e] : list[d].gA[e];
      return v;
    };
    const bool left_b = kind != CovKind::kSelfA;
    const bool right_b = kind == CovKind::kSelfB;
    const std::size_t nl = left_b ? nb : na, nr = right_b ? nb : na;
    std::vector<std::vector<double>> left(nl), right_store;
    std::vector<double> mean_l(nl), var_l(nl), mean_r, var_r;
    auto moments = [&](const std::vector<double>& v, double& m, double& var) {
      m = 0.0;
      for (double x : v) m += x * inv_n;
      var = 0.0;
      for (double x : v) var += (x - m) * (x - m) * inv_n;
    };
    for (std::size_t e = 0; e < nl; ++e) {
      left[e] = column(left_b, e);
      moments(left[e], mean_l[e], var_l[e]);
    }
    const bool self = kind != CovKind::kCross;
    if (!self) {
      right_store.resize(nr);
      mean_r.resize(nr);
      var_r.resize(nr);
      for (std::size_t e = 0; e < nr; ++e) {
        right_store[e] = column(right_b, e);
        moments(right_store[e], mean_r[e], var_r[e]);
      }
    }
    const auto& right = self ? left : right_store;
    const auto& mr = self ? mean_l : mean_r;
    const auto& vr = self ? var_l : var_r;

    auto use_pair = [&](std::size_t u, std::size_t v) {
      double c = 0.0;
      for (std::size_t d = 0; d < list.size(); ++d)
        c += (left[u][d] - mean_l[u]) * (right[v][d] - mr[v]) * inv_n;
      covs.push_back(c);
      sum_var += 0.5 * (var_l[u] + vr[v]);
      sum_geo += std::sqrt(var_l[u] * vr[v]);
    };
    const std::size_t total = self ? nl * (nl - 1) / 2 : nl * nr;
    if (total <= per_matrix) {
      for (std::size_t u = 0; u < nl; ++u)
        for (std::size_t v = self ? u + 1 : 0; v < nr; ++v) use_pair(u, v);
    } else {
      std::uniform_int_distribution<std::size_t> pu(0, nl - 1), pv(0, nr - 1);
      for (std::size_t k = 0; k < per_matrix;) {
        const std::size_t u = pu(rng), v = pv(rng);
        if (self && u == v) continue;
        use_pair(u, v);
        ++k;
      }
    }
  }
  s.pairs = covs.size();
  require(s.pairs > 0, "covariance_summary: no element pairs");
  double abs_sum = 0.0, max_abs = 0.0;
  std::size_t positive = 0;
  for (double c : covs) {
    abs_sum += std::fabs(c);
    max_abs = std::max(max_abs, std::fabs(c));
    positive += c > 0.0 ? 1 : 0;
  }
  const double n = static_cast<double>(s.pairs);
  s.mean_abs_cov = abs_sum / n;
  s.mean_variance = sum_var / n;
  s.mean_geo_variance = sum_geo / n;
  s.concentration = s.mean_variance > 0.0 ? s.mean_abs_cov / s.mean_variance : 0.0;
  s.scaled_concentration = s.mean_geo_variance > 0.0 ? s.mean_abs_cov / s.mean_geo_variance : 0.0;
  s.positive_fraction = static_cast<double>(positive) / n;

  const double half = max_abs > 0.0 ? max_abs : 1.0;
  s.counts.assign(bins, 0);
  for (std::size_t b = 0; b <= bins; ++b)
    s.bin_edges.push_back(-half + 2.0 * half * static_cast<double>(b) / static_cast<double>(bins));
  for (double c : covs) {
    auto b = static_cast<std::size_t>((c + half) / (2.0 * half) * static_cast<double>(bins));
    s.counts[std::min(b, bins - 1)]++;
  }
  return s;
}

std::string CovarianceSummary::histogram_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "bin_low,bin_high,count\n";
  for (std::size_t b = 0; b < counts.size(); ++b)
    os << bin_edges[b] << ',' << bin_edges[b + 1] << ',' << counts[b] << '\n';
  return os.str();
}

std::vector<AuditEntry> expectation_audit(const GradientInstanceSet& set) {
  require(set.n_draws >= 2, "expectation_audit needs at least two draws");
  std::vector<AuditEntry> out;
  for (const std::string& name : set.lora_stats.matrices()) {
    AuditEntry e;
    e.name = name;
    std::vector<double> ratios;
    for (char f : {'B', 'A'}) {
      const MomentAccumulator& acc = set.lora_stats.moments.at(lora_key(name, f));
      const Tensor m = mean_gradient(acc), v = variance(acc);
      for (std::size_t i = 0; i < v.size(); ++i) {
        ++e.elements;
        // Variances below rounding of the second moment are treated as zero.
        if (v[i] <= 1e-14 * fisher(acc)[i] || v[i] == 0.0) {
          ++e.flagged;
          continue;
        }
        ratios.push_back(m[i] * m[i] / v[i]);
      }
    }
    e.median = median_of(ratios);
    e.p90 = quantile(ratios, 0.9);
    out.push_back(e);
  }
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, "spearman needs two equal samples of size >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<FitEntry> factorization_fit(const std::map<std::string, Tensor>& approx,
                                        const std::map<std::string, Tensor>& oracle,
                                        double eps) {
  require(approx.size() == oracle.size(), "factorization_fit: matrix sets differ");
  std::vector<FitEntry> out;
  for (const auto& [name, a] : approx) {
    auto it = oracle.find(name);
    require(it != oracle.end(), "factorization_fit: oracle missing '" + name + "'");
    require_shape(a.same_shape(it->second), "factorization_fit: shape mismatch for " + name);
    FitEntry f;
    f.name = name;
    f.spearman = spearman(a.values(), it->second.values());
    std::vector<double> lr;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double o = it->second[i];
      if (o <= eps || a[i] <= 0.0) continue;
      lr.push_back(std::log(a[i] / o));
    }
    f.compared = lr.size();
    if (!lr.empty()) {
      f.log_ratio_mean = std::accumulate(lr.begin(), lr.end(), 0.0) / static_cast<double>(lr.size());
      f.log_ratio_median = median_of(lr);
      for (double v : lr) f.log_ratio_max_abs = std::max(f.log_ratio_max_abs, std::fabs(v));
    }
    out.push_back(f);
  }
  return out;
}

nlohmann::json to_json(const TermNorms& t) {
  return {{"B0A0", t.b0a0}, {"dB_A0", t.db_a0}, {"B0_dA", t.b0_da}, {"dB_dA", t.db_da},
          {"dominance_ratio", t.dominance_ratio()}};
}

nlohmann::json to_json(const CovarianceSummary& c) {
  return {{"kind", to_string(c.kind)},
          {"pairs", c.pairs},
          {"mean_abs_cov", c.mean_abs_cov},
          {"mean_variance", c.mean_variance},
          {"mean_geo_variance", c.mean_geo_variance},
          {"concentration", c.concentration},
          {"scaled_concentration", c.scaled_concentration},
          {"positive_fraction", c.positive_fraction}};
}

nlohmann::json to_json(const std::vector<AuditEntry>& a) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : a)
    j.push_back({{"name", e.name}, {"median", e.median}, {"p90", e.p90}, {"flagged", e.flagged},
                 {"elements", e.elements}});
  return j;
}

nlohmann::json to_json(const std::vector<FitEntry>& f) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : f)
    j.push_back({{"name", e.name},
                 {"spearman", e.spearman},
                 {"log_ratio_mean", e.log_ratio_mean},
                 {"log_ratio_median", e.log_ratio_median},
                 {"log_ratio_max_abs", e.log_ratio_max_abs},
                 {"compared", e.compared}});
  return j;
}

}  // namespace varlora
