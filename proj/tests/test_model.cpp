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
#include "oracles.hpp"
#include "varlora/checkpoint.hpp"
#include "varlora/datagen.hpp"
#include "varlora/errors.hpp"
#include "varlora/lora.hpp"
#include "varlora/model.hpp"

using namespace varlora;
using varlora::testing::fd_probe_adapters;
using varlora::testing::fd_probe_weights;
using varlora::testing::max_rel_error;

namespace {

Corpus small_corpus() { return generate(CorpusSpec{.seed = 1, .n_entities = 4, .qa_per_entity = 3}); }

// Weights large enough that gradients sit well above finite-difference noise.
ParamSet scaled_params(const ModelConfig& c, double factor) {
  ParamSet p = init_params(c);
  for (auto& [name, t] : p.tensors)
    if (!name.ends_with(".gain") && !name.ends_with(".bias")) t = scale(t, factor);
  return p;
}

}  // namespace

TEST_CASE("full-model gradients match central differences") {
  const Corpus corpus = small_corpus();
  const std::vector<Example> batch{corpus.examples[0], corpus.examples[4], corpus.examples[8]};
  const ParamSet p = scaled_params(ModelConfig{}, 10.0);
  const auto probes = fd_probe_weights(p, batch, 3, 42);
  CHECK(probes.size() >= 3 * p.tensors.size());
  CHECK(max_rel_error(probes) <= 1e-6);
}

TEST_CASE("zero adapters leave the forward unchanged") {
  const Corpus corpus = small_corpus();
  const ParamSet p = init_params(ModelConfig{});
  const AdapterSet a = init_standard(p.config, 4, 3);
  const std::span<const Example> batch(corpus.examples.data(), 5);
  CHECK(std::fabs(forward_nll(p, &a, batch) - forward_nll(p, nullptr, batch)) <= 1e-12);
}

TEST_CASE("zeroed head gives ln V") {
  const Corpus corpus = small_corpus();
  ParamSet p = init_params(ModelConfig{});
  p.at("head") = Tensor::zeros_like(p.at("head"));
  const double nll = forward_nll(p, nullptr, std::span<const Example>(corpus.examples.data(), 4));
  CHECK(std::fabs(nll - std::log(256.0)) <= 1e-12);
}

TEST_CASE("merged weights reproduce the adapter forward") {
  const Corpus corpus = small_corpus();
  const ParamSet p = init_params(ModelConfig{});
  const AdapterSet a = init_gaussian_probe(p.config, 4, 0.05, 8);
  const ParamSet merged = merge(p, a);
  const std::span<const Example> batch(corpus.examples.data(), 4);
  CHECK(std::fabs(forward_nll(merged, nullptr, batch) - forward_nll(p, &a, batch)) <= 1e-10);
  CHECK(max_abs_diff(forward_logits(merged, nullptr, batch), forward_logits(p, &a, batch)) <=
        1e-10);
}

TEST_CASE("adapter shape mismatch is a contract error") {
  const Corpus corpus = small_corpus();
  const ParamSet p = init_params(ModelConfig{});
  AdapterSet a = init_standard(p.config, 4, 3);
  a.begin()->second.A = Tensor({4, 7});
  CHECK_THROWS_AS(forward_nll(p, &a, std::span<const Example>(corpus.examples.data(), 1)),
                  ShapeError);
}

TEST_CASE("per-example gradients") {
  const Corpus corpus = small_corpus();
  const ParamSet p = init_params(ModelConfig{});
  Example masked = corpus.examples[0];
  std::fill(masked.answer_mask.begin(), masked.answer_mask.end(), 0);
  const Gradients g = per_example_grad(p, nullptr, masked, GradScope::kWeights);
  CHECK(g.loss == 0.0);
  for (const auto& [name, t] : g.weights) CHECK(frobenius_norm(t) == 0.0);

  const Gradients g1 = per_example_grad(p, nullptr, corpus.examples[1], GradScope::kWeights);
  const Gradients g2 = per_example_grad(p, nullptr, corpus.examples[1], GradScope::kWeights);
  for (const auto& [name, t] : g1.weights) CHECK(t == g2.weights.at(name));
}

TEST_CASE("adapter B gradient at probe init matches central differences") {
  const Corpus corpus = small_corpus();
  const ParamSet p = scaled_params(ModelConfig{}, 5.0);
  const AdapterSet a = init_gaussian_probe(p.config, 4, 0.05, 21);
  const auto probes = fd_probe_adapters(p, a, corpus.examples[2], 3, 5);
  CHECK(max_rel_error(probes) <= 1e-6);
}

TEST_CASE("training memorizes a single entity and is reproducible") {
  const Corpus corpus = generate(CorpusSpec{.seed = 4, .n_entities = 40});
  const std::vector<Example> data(corpus.examples.begin(), corpus.examples.begin() + 10);
  const ParamSet p0 = init_params(ModelConfig{});
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 2;
  cfg.adam.lr = 1e-2;
  const TrainResult r = train(p0, data, cfg);
  REQUIRE(r.epoch_loss.size() == 50);
  CHECK(forward_nll(r.params, nullptr, data) < 0.1);

  const TrainResult again = train(p0, data, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "varlora_test_model";
  std::filesystem::create_directories(dir);
  save_checkpoint(r.params, dir / "a.ckpt");
  save_checkpoint(again.params, dir / "b.ckpt");
  CHECK(file_digest(dir / "a.ckpt") == file_digest(dir / "b.ckpt"));
  const ParamSet loaded = load_checkpoint(dir / "a.ckpt");
  for (const auto& [name, t] : r.params.tensors) CHECK(loaded.at(name) == t);
  std::filesystem::remove_all(dir);

  SUBCASE("greedy decoding reproduces the memorized answer") {
    const Example& ex = data[0];
    const auto prompt = ex.prompt();
    const auto answer = ex.answer();
    CHECK(generate_greedy(r.params, nullptr, prompt, answer.size()) == answer);
    CHECK(generate_greedy(r.params, nullptr, prompt, 0).empty());
  }
}

TEST_CASE("zero epochs return the input") {
  const Corpus corpus = small_corpus();
  const ParamSet p0 = init_params(ModelConfig{});
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainResult r = train(p0, corpus.examples, cfg);
  for (const auto& [name, t] : p0.tensors) CHECK(r.params.at(name) == t);
  CHECK(r.epoch_loss.empty());
}

TEST_CASE("greedy ties go to the lowest token id") {
  const double tied[] = {0.5, 2.0, 2.0, -1.0};
  CHECK(argmax_lowest(tied) == 1);
  ParamSet p = init_params(ModelConfig{});
  p.at("head") = Tensor::zeros_like(p.at("head"));
  const std::vector<int> prompt{1, 5, 9};
  CHECK(generate_greedy(p, nullptr, prompt, 3) == std::vector<int>{0, 0, 0});
}
