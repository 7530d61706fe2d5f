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

#include "varlora/lora.hpp"

#include <random>

#include "varlora/errors.hpp"
#include "varlora/model.hpp"

namespace varlora {

namespace {

void fill_normal(Tensor& t, std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> normal(0.0, sigma);
  for (double& v : t.raw()) v = normal(rng);
}

}  // namespace

AdapterSet init_gaussian_probe(const ModelConfig& config, const std::vector<std::string>& names,
                               std::size_t rank, double sigma, std::uint64_t seed) {
  require(sigma > 0.0, "probe init needs sigma > 0 (zero init yields zero gradients)");
  require(rank >= 1, "adapter rank must be >= 1");
  const auto shapes = param_shapes(config);
  std::mt19937_64 rng(seed);
  AdapterSet out;
  for (const std::string& name : names) {
    require(is_adaptable(name), "'" + name + "' is not adaptable");
    const auto& s = shapes.at(name);
    require(rank <= std::min(s[0], s[1]), "adapter rank exceeds min(m, n) for " + name);
    AdapterPair p{Tensor({s[0], rank}), Tensor({rank, s[1]}), sigma};
    fill_normal(p.B, rng, sigma);
    fill_normal(p.A, rng, sigma);
    out.emplace(name, std::move(p));
  }
  return out;
}

AdapterSet init_gaussian_probe(const ModelConfig& config, std::size_t rank, double sigma,
                               std::uint64_t seed) {
  return init_gaussian_probe(config, adaptable_names(config), rank, sigma, seed);
}

AdapterPair init_standard_pair(std::size_t m, std::size_t n, std::size_t rank, double sigma,
                               std::uint64_t seed) {
  require(rank >= 1 && rank <= std::min(m, n), "adapter rank out of range");
  std::mt19937_64 rng(seed);
  AdapterPair p{Tensor({m, rank}), Tensor({rank, n}), sigma};
  fill_normal(p.A, rng, sigma);
  return p;
}

AdapterSet init_standard(const ModelConfig& config, std::size_t rank, std::uint64_t seed,
                         double sigma) {
  const auto shapes = param_shapes(config);
  AdapterSet out;
  std::uint64_t k = 0;
  for (const std::string& name : adaptable_names(config)) {
    const auto& s = shapes.at(name);
    out.emplace(name, init_standard_pair(s[0], s[1], rank, sigma, seed + 7919 * (k++)));
  }
  return out;
}

void check_adapters(const ParamSet& params, const AdapterSet& adapters) {
  for (const auto& [name, p] : adapters) {
    require(is_adaptable(name), "adapter attached to non-adaptable '" + name + "'");
    const Tensor& w = params.at(name);
    require_shape(p.B.rank() == 2 && p.A.rank() == 2 && p.B.rows() == w.rows() &&
                      p.A.cols() == w.cols() && p.B.cols() == p.A.rows(),
                  "adapter shape mismatch for " + name + ": B " + shape_string(p.B.shape()) +
                      ", A " + shape_string(p.A.shape()) + ", W " + shape_string(w.shape()));
  }
}

ParamSet merge(const ParamSet& params, const AdapterSet& adapters) {
  check_adapters(params, adapters);
  ParamSet out = params;
  for (const auto& [name, p] : adapters) add_inplace(out.at(name), p.delta());
  return out;
}

AdapterGradMap adapter_grads(const ParamSet& params, const AdapterSet& adapters,
                             const Example& example) {
  return per_example_grad(params, &adapters, example, GradScope::kAdapters).adapters;
}

}  // namespace varlora
