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

// Independent oracles shared by the unit tests and the acceptance binary:
// finite differences over the tiny LM, brute-force KS and LCS, and a
// power-iteration low-rank approximation.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "varlora/eval.hpp"
#include "varlora/lora.hpp"
#include "varlora/model.hpp"

namespace varlora::testing {

struct ProbeResult {
  std::string tensor;
  std::size_t index = 0;
  double autodiff = 0.0;
  double finite_diff = 0.0;
  double rel_error = 0.0;
};

inline double probe_rel_error(double ad, double fd) {
  return std::fabs(ad - fd) / (std::fabs(fd) + 1e-8);
}

// Entries whose gradient can be nonzero for this batch: embedding rows of
// tokens and positions that occur, anything for dense tensors.
inline std::vector<std::size_t> live_entries(const std::string& name, const Tensor& t,
                                             std::span<const Example> batch) {
  std::set<std::size_t> rows;
  if (name == "tok_emb" || name == "pos_emb") {
    for (const Example& ex : batch)
      for (std::size_t i = 0; i + 1 < ex.tokens.size(); ++i)
        rows.insert(name == "tok_emb" ? static_cast<std::size_t>(ex.tokens[i]) : i);
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (rows.empty() || rows.count(i / t.cols())) out.push_back(i);
  return out;
}

inline std::vector<ProbeResult> fd_probe_weights(const ParamSet& params,
                                                 std::span<const Example> batch,
                                                 std::size_t probes_per_tensor,
                                                 std::uint64_t seed, double h = 1e-5) {
  const Gradients g = nll_gradients(params, nullptr, batch, GradScope::kWeights);
  std::mt19937_64 rng(seed);
  std::vector<ProbeResult> out;
  for (const auto& [name, t] : params.tensors) {
    auto live = live_entries(name, t, batch);
    std::shuffle(live.begin(), live.end(), rng);
    for (std::size_t k = 0; k < std::min(probes_per_tensor, live.size()); ++k) {
      const std::size_t i = live[k];
      ParamSet p = params;
      const double x0 = t[i];
      p.at(name)[i] = x0 + h;
      const double fp = forward_nll(p, nullptr, batch);
      p.at(name)[i] = x0 - h;
      const double fm = forward_nll(p, nullptr, batch);
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = g.weights.at(name)[i];
      out.push_back({name, i, ad, fd, probe_rel_error(ad, fd)});
    }
  }
  return out;
}

inline std::vector<ProbeResult> fd_probe_adapters(const ParamSet& params,
                                                  const AdapterSet& adapters,
                                                  const Example& example,
                                                  std::size_t probes_per_tensor,
                                                  std::uint64_t seed, double h = 1e-5) {
  const AdapterGradMap g = adapter_grads(params, adapters, example);
  const std::span<const Example> one(&example, 1);
  std::mt19937_64 rng(seed);
  std::vector<ProbeResult> out;
  for (const auto& [name, pair] : adapters) {
    for (int which = 0; which < 2; ++which) {
      const Tensor& t = which == 0 ? pair.B : pair.A;
      std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
      for (std::size_t k = 0; k < probes_per_tensor; ++k) {
        const std::size_t i = pick(rng);
        AdapterSet a = adapters;
        Tensor& target = which == 0 ? a.at(name).B : a.at(name).A;
        target[i] = t[i] + h;
        const double fp = forward_nll(params, &a, one);
        target[i] = t[i] - h;
        const double fm = forward_nll(params, &a, one);
        const double fd = (fp - fm) / (2.0 * h);
        const double ad = which == 0 ? g.at(name).gB[i] : g.at(name).gA[i];
        out.push_back({name + (which == 0 ? "/B" : "/A"), i, ad, fd, probe_rel_error(ad, fd)});
      }
    }
  }
  return out;
}

inline double max_rel_error(const std::vector<ProbeResult>& probes) {
  double m = 0.0;
  for (const auto& p : probes) m = std::max(m, p.rel_error);
  return m;
}

inline double ecdf(const std::vector<double>& s, double t) {
  return static_cast<double>(std::count_if(s.begin(), s.end(), [t](double v) { return v <= t; })) /
         static_cast<double>(s.size());
}

// Brute-force sup over every sample point, theta-function form of Q for
// small lambda and a long fixed series otherwise.
inline KsResult ks_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  double d = 0.0;
  for (const auto* s : {&x, &y})
    for (double t : *s) d = std::max(d, std::fabs(ecdf(x, t) - ecdf(y, t)));
  const long double n = static_cast<long double>(x.size()) * y.size() / (x.size() + y.size());
  const long double lam = (std::sqrt(n) + 0.12L + 0.11L / std::sqrt(n)) * d;
  long double q;
  if (lam < 1e-3L) {
    q = 1.0L;
  } else if (lam < 1.0L) {
    const long double pi = 3.141592653589793238462643383279L;
    long double s = 0.0L;
    for (int k = 1; k < 50; ++k)
      s += std::exp(-(2 * k - 1) * (2 * k - 1) * pi * pi / (8.0L * lam * lam));
    q = 1.0L - std::sqrt(2.0L * pi) / lam * s;
  } else {
    q = 0.0L;
    for (int k = 1; k < 200; ++k) q += (k % 2 ? 2.0L : -2.0L) * std::exp(-2.0L * k * k * lam * lam);
  }
  q = std::clamp(q, 1e-300L, 1.0L);
  return {d, static_cast<double>(q)};
}

inline std::size_t lcs_oracle(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) {
    if (i == a.size() || j == b.size()) return std::size_t{0};
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const std::size_t v = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    memo[key] = v;
    return v;
  };
  return go(0, 0);
}

// Best rank-r approximation by power iteration with deflation on W^T W.
inline Tensor power_iteration_lowrank(const Tensor& W, std::size_t r) {
  const std::size_t m = W.rows(), n = W.cols();
  Tensor approx({m, n});
  Tensor R = W;
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd;
  for (std::size_t k = 0; k < r; ++k) {
    std::vector<double> v(n);
    for (double& x : v) x = nd(rng);
    for (int it = 0; it < 20000; ++it) {
      std::vector<double> u(m, 0.0), w(n, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) u[i] += R(i, j) * v[j];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) w[j] += R(i, j) * u[i];
      double norm = 0.0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < n; ++j) v[j] = w[j] / norm;
    }
    std::vector<double> u(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) u[i] += R(i, j) * v[j];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        approx(i, j) += u[i] * v[j];
        R(i, j) -= u[i] * v[j];
      }
  }
  return approx;
}

}  // namespace varlora::testing
