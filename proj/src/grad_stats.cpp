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

#include "varlora/grad_stats.hpp"

#include <algorithm>
#include <cmath>

#include "varlora/checkpoint.hpp"
#include "varlora/errors.hpp"

namespace varlora {

MomentAccumulator::MomentAccumulator(std::vector<std::size_t> shape)
    : sum_g(shape), sum_g2(shape), sum_abs(std::move(shape)) {}

void MomentAccumulator::add(const Tensor& grad) {
  require_shape(grad.shape() == sum_g.shape(),
                "accumulate: gradient shape " + shape_string(grad.shape()) + " vs " +
                    shape_string(sum_g.shape()));
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double g = grad[i];
    sum_g[i] += g;
    sum_g2[i] += g * g;
    sum_abs[i] += std::fabs(g);
  }
  ++n;
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
  require_shape(other.shape() == shape(), "merge: accumulator shape mismatch");
  add_inplace(sum_g, other.sum_g);
  add_inplace(sum_g2, other.sum_g2);
  add_inplace(sum_abs, other.sum_abs);
  n += other.n;
}

MomentAccumulator accumulate(MomentAccumulator acc, const Tensor& grad) {
  acc.add(grad);
  return acc;
}

namespace {

// Divides rather than multiplying by 1/n so that a constant stream whose sums
// are exact returns the per-sample value bit for bit.
Tensor divided(Tensor t, std::size_t n) {
  for (double& v : t.raw()) v /= static_cast<double>(n);
  return t;
}

}  // namespace

Tensor mean_gradient(const MomentAccumulator& acc) {
  require(acc.n >= 1, "moments need at least one sample");
  return divided(acc.sum_g, acc.n);
}

Tensor fisher(const MomentAccumulator& acc) {
  require(acc.n >= 1, "fisher needs at least one sample");
  return divided(acc.sum_g2, acc.n);
}

Tensor variance(const MomentAccumulator& acc, bool unbiased) {
  require(acc.n >= 2, "variance needs at least two samples");
  const double n = static_cast<double>(acc.n);
  const double norm = unbiased ? n / (n - 1.0) : 1.0;
  Tensor out(acc.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mean = acc.sum_g[i] / n;
    out[i] = std::max(0.0, acc.sum_g2[i] / n - mean * mean) * norm;
  }
  return out;
}

Tensor exp_magnitude(const MomentAccumulator& acc) { return abs(mean_gradient(acc)); }

Tensor abs_magnitude(const MomentAccumulator& acc) {
  require(acc.n >= 1, "abs_magnitude needs at least one sample");
  return divided(acc.sum_abs, acc.n);
}

Tensor lora_variance_approx(const Tensor& varB, const Tensor& varA) { return matmul(varB, varA); }

std::string to_string(Method m) {
  switch (m) {
    case Method::kFila: return "fila";
    case Method::kVila: return "vila";
    case Method::kExpila: return "expila";
    case Method::kAbsila: return "absila";
  }
  return "?";
}

std::string to_string(Scope s) { return s == Scope::kFull ? "full" : "lora"; }

Method method_from_string(const std::string& s) {
  if (s == "fila" || s == "fi") return Method::kFila;
  if (s == "vila") return Method::kVila;
  if (s == "expila") return Method::kExpila;
  if (s == "absila") return Method::kAbsila;
  throw ContractError("unknown importance method '" + s + "'");
}

Scope scope_from_string(const std::string& s) {
  if (s == "full") return Scope::kFull;
  if (s == "lora") return Scope::kLora;
  throw ContractError("unknown stats scope '" + s + "'");
}

Tensor moment_statistic(const MomentAccumulator& acc, Method method) {
  switch (method) {
    case Method::kFila: return fisher(acc);
    case Method::kVila: return variance(acc);
    case Method::kExpila: return exp_magnitude(acc);
    case Method::kAbsila: return abs_magnitude(acc);
  }
  throw ContractError("unknown method");
}

std::string lora_key(const std::string& name, char factor) {
  return name + "/" + std::string(1, factor);
}

std::vector<std::string> StatsSet::matrices() const {
  std::vector<std::string> out;
  for (const auto& [key, _] : moments) {
    if (scope == Scope::kFull) {
      out.push_back(key);
    } else if (key.ends_with("/B")) {
      out.push_back(key.substr(0, key.size() - 2));
    }
  }
  return out;
}

std::size_t StatsSet::samples() const { return moments.empty() ? 0 : moments.begin()->second.n; }

std::size_t StatsSet::stored_floats() const {
  std::size_t total = 0;
  for (const auto& [_, acc] : moments)
    total += acc.sum_g.size() + acc.sum_g2.size() + acc.sum_abs.size();
  return total;
}

void StatsSet::merge(const StatsSet& other) {
  require(scope == other.scope && rank == other.rank, "merge: stats scope/rank differ");
  for (const auto& [key, acc] : other.moments) {
    auto it = moments.find(key);
    require(it != moments.end(), "merge: stats key '" + key + "' missing");
    it->second.merge(acc);
  }
  require(moments.size() == other.moments.size(), "merge: stats key sets differ");
}

StatsSet collect_stats(const ParamSet& params, const AdapterSet* adapters,
                       std::span<const Example> examples, Scope scope) {
  require(!examples.empty(), "collect_stats: no examples");
  StatsSet s;
  s.scope = scope;
  if (scope == Scope::kLora) {
    require(adapters != nullptr && !adapters->empty(), "lora-scope stats need adapters");
    s.rank = adapters->begin()->second.rank();
    for (const auto& [name, p] : *adapters) {
      s.moments.emplace(lora_key(name, 'B'), MomentAccumulator(p.B.shape()));
      s.moments.emplace(lora_key(name, 'A'), MomentAccumulator(p.A.shape()));
    }
  } else {
    for (const std::string& name : adaptable_names(params.config))
      s.moments.emplace(name, MomentAccumulator(params.at(name).shape()));
  }
  for (const Example& ex : examples) {
    if (scope == Scope::kLora) {
      const Gradients g = per_example_grad(params, adapters, ex, GradScope::kAdapters);
      for (const auto& [name, gg] : g.adapters) {
        s.moments.at(lora_key(name, 'B')).add(gg.gB);
        s.moments.at(lora_key(name, 'A')).add(gg.gA);
      }
    } else {
      const Gradients g = per_example_grad(params, adapters, ex, GradScope::kWeights);
      for (auto& [name, acc] : s.moments) acc.add(g.weights.at(name));
    }
  }
  return s;
}

std::size_t analytic_stored_floats(const ModelConfig& config, Scope scope, std::size_t rank) {
  const auto shapes = param_shapes(config);
  std::size_t total = 0;
  for (const std::string& name : adaptable_names(config)) {
    const std::size_t m = shapes.at(name)[0], n = shapes.at(name)[1];
    total += scope == Scope::kFull ? 3 * m * n : 3 * (m * rank + rank * n);
  }
  return total;
}

std::vector<std::string> ImportanceMap::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : values) out.push_back(name);
  return out;
}

std::map<std::string, Tensor> statistic_map(const StatsSet& stats, Method method) {
  std::map<std::string, Tensor> out;
  for (const std::string& name : stats.matrices()) {
    if (stats.scope == Scope::kFull) {
      out.emplace(name, moment_statistic(stats.moments.at(name), method));
    } else {
      out.emplace(name,
                  lora_variance_approx(moment_statistic(stats.moments.at(lora_key(name, 'B')), method),
                                       moment_statistic(stats.moments.at(lora_key(name, 'A')), method)));
    }
  }
  return out;
}

ImportanceMap importance_map(const StatsSet& forget, const StatsSet& retain, Method method,
                             double eps, bool eps_relative) {
  require(eps > 0.0, "importance map needs eps > 0");
  require(forget.scope == retain.scope, "forget and retain stats have different scopes");
  const auto num = statistic_map(forget, method);
  const auto den = statistic_map(retain, method);
  ImportanceMap out;
  out.method = method;
  out.scope = forget.scope;
  out.eps = eps;
  out.eps_relative = eps_relative;
  for (const auto& [name, f] : num) {
    auto it = den.find(name);
    require(it != den.end(), "retain stats missing matrix '" + name + "'");
    require_shape(f.same_shape(it->second), "stat shape mismatch for " + name);
    Tensor m(f.shape());
    double floor = eps;
    if (eps_relative) {
      const double scale = mean(it->second);
      floor = scale > 0.0 ? eps * scale : eps;
    }
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = f[i] / (it->second[i] + floor);
    out.values.emplace(name, std::move(m));
  }
  require(num.size() == den.size(), "forget stats missing matrices present in retain stats");
  return out;
}

std::vector<std::string> rank_layers(const ImportanceMap& map, double top_fraction) {
  require(!map.values.empty(), "rank_layers: empty map");
  require(top_fraction > 0.0 && top_fraction <= 1.0, "rank_layers: fraction must be in (0, 1]");
  std::vector<std::pair<double, std::string>> scored;
  for (const auto& [name, t] : map.values) scored.emplace_back(mean(t), name);
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  const auto k = static_cast<std::size_t>(
      std::ceil(top_fraction * static_cast<double>(scored.size()) - 1e-9));
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) out.push_back(scored[i].second);
  return out;
}

void save_stats(const StatsSet& stats, const std::filesystem::path& path) {
  TensorArchive a;
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [key, acc] : stats.moments) {
    a.tensors.emplace_back(key + ".sum_g", acc.sum_g);
    a.tensors.emplace_back(key + ".sum_g2", acc.sum_g2);
    a.tensors.emplace_back(key + ".sum_abs", acc.sum_abs);
    counts[key] = acc.n;
  }
  a.meta = {{"kind", "stats"}, {"scope", to_string(stats.scope)}, {"rank", stats.rank},
            {"counts", counts}};
  write_archive(a, path);
}

StatsSet load_stats(const std::filesystem::path& path) {
  const TensorArchive a = read_archive(path);
  require(a.meta.value("kind", "") == "stats", path.string() + " is not a stats file");
  StatsSet s;
  s.scope = scope_from_string(a.meta.at("scope"));
  s.rank = a.meta.at("rank");
  for (const auto& [key, n] : a.meta.at("counts").items()) {
    MomentAccumulator acc;
    acc.sum_g = a.at(key + ".sum_g");
    acc.sum_g2 = a.at(key + ".sum_g2");
    acc.sum_abs = a.at(key + ".sum_abs");
    acc.n = n.get<std::size_t>();
    s.moments.emplace(key, std::move(acc));
  }
  return s;
}

void save_importance_map(const ImportanceMap& map, const std::filesystem::path& path) {
  TensorArchive a;
  a.meta = {{"kind", "importance_map"},
            {"method", to_string(map.method)},
            {"scope", to_string(map.scope)},
            {"eps", map.eps},
            {"eps_relative", map.eps_relative}};
  for (const auto& [name, t] : map.values) a.tensors.emplace_back(name, t);
  write_archive(a, path);
}

ImportanceMap load_importance_map(const std::filesystem::path& path) {
  TensorArchive a = read_archive(path);
  require(a.meta.value("kind", "") == "importance_map", path.string() + " is not a map file");
  ImportanceMap m;
  m.method = method_from_string(a.meta.at("method"));
  m.scope = scope_from_string(a.meta.at("scope"));
  m.eps = a.meta.at("eps");
  m.eps_relative = a.meta.value("eps_relative", false);
  for (auto& [name, t] : a.tensors) m.values.emplace(name, std::move(t));
  return m;
}

}  // namespace varlora
