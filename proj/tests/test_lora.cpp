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

#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "varlora/checkpoint.hpp"
#include "varlora/datagen.hpp"
#include "varlora/errors.hpp"
#include "varlora/lora.hpp"
#include "varlora/model.hpp"

using namespace varlora;

TEST_CASE("gaussian probe entries follow N(0, sigma^2)") {
  const ModelConfig c;
  const double sigma = 0.05;
  const AdapterSet a = init_gaussian_probe(c, 8, sigma, 123);
  double sum = 0.0, sum2 = 0.0;
  std::size_t n = 0;
  for (const auto& [name, p] : a) {
    for (const Tensor* t : {&p.B, &p.A})
      for (double v : t->raw()) {
        sum += v;
        sum2 += v * v;
        ++n;
      }
  }
  REQUIRE(n >= 10000);
  const double mean = sum / n;
  const double sd = std::sqrt(sum2 / n - mean * mean);
  CHECK(std::fabs(mean) <= 3.0 * sigma / std::sqrt(static_cast<double>(n)));
  CHECK(std::fabs(sd - sigma) <= 0.05 * sigma);
  CHECK(init_gaussian_probe(c, 8, sigma, 123) == a);
}

TEST_CASE("probe init rejects non-positive sigma") {
  CHECK_THROWS_AS(init_gaussian_probe(ModelConfig{}, 4, 0.0, 1), ContractError);
  CHECK_THROWS_AS(init_gaussian_probe(ModelConfig{}, 4, -0.1, 1), ContractError);
}

TEST_CASE("standard init is the identity on the model") {
  const ModelConfig c;
  const AdapterSet a = init_standard(c, 4, 9);
  for (const auto& [name, p] : a) {
    CHECK(frobenius_norm(p.delta()) == 0.0);
    CHECK(frobenius_norm(p.A) > 0.0);
  }
  const ParamSet p = init_params(c);
  const ParamSet merged = merge(p, a);
  for (const auto& [name, t] : p.tensors) CHECK(merged.at(name) == t);

  const Corpus corpus = generate(CorpusSpec{.n_entities = 4, .qa_per_entity = 2});
  const AdapterGradMap g = adapter_grads(p, a, corpus.examples[0]);
  double total = 0.0;
  for (const auto& [name, gg] : g) total += frobenius_norm(gg.gB);
  CHECK(total > 0.0);
}

TEST_CASE("adapter gradients have factor shapes and vanish on masked examples") {
  const ModelConfig c;
  const ParamSet p = init_params(c);
  const AdapterSet a = init_gaussian_probe(c, 4, 0.05, 2);
  const Corpus corpus = generate(CorpusSpec{.n_entities = 4, .qa_per_entity = 2});
  Example ex = corpus.examples[1];
  const AdapterGradMap g = adapter_grads(p, a, ex);
  CHECK(g.size() == adaptable_names(c).size());
  for (const auto& [name, gg] : g) {
    CHECK(gg.gB.shape() == a.at(name).B.shape());
    CHECK(gg.gA.shape() == a.at(name).A.shape());
  }
  std::fill(ex.answer_mask.begin(), ex.answer_mask.end(), 0);
  for (const auto& [name, gg] : adapter_grads(p, a, ex)) {
    CHECK(frobenius_norm(gg.gB) == 0.0);
    CHECK(frobenius_norm(gg.gA) == 0.0);
  }
}

TEST_CASE("merge round trip restores the base weights") {
  const ModelConfig c;
  const ParamSet p = init_params(c);
  const AdapterSet a = init_gaussian_probe(c, 4, 0.3, 5);
  ParamSet residual = p;
  for (const auto& [name, pair] : a) add_inplace(residual.at(name), pair.delta(), -1.0);
  const ParamSet back = merge(residual, a);
  for (const auto& [name, t] : p.tensors) CHECK(max_abs_diff(back.at(name), t) <= 1e-10);
}

TEST_CASE("adapters can only attach to adaptable matrices") {
  const ModelConfig c;
  CHECK_THROWS_AS(init_gaussian_probe(c, {"tok_emb"}, 4, 0.05, 1), ContractError);
  CHECK_THROWS_AS(init_gaussian_probe(c, {"head"}, 64, 0.05, 1), ContractError);
}

TEST_CASE("adapter files round-trip bit-exactly") {
  const auto path = std::filesystem::temp_directory_path() / "varlora_test_adapters.bin";
  const AdapterSet a = init_gaussian_probe(ModelConfig{}, 4, 0.05, 77);
  save_adapters(a, path);
  CHECK(load_adapters(path) == a);
  std::filesystem::remove(path);
}
