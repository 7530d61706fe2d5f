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
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "varlora/errors.hpp"
#include "varlora/theorem_lab.hpp"

using namespace varlora;
using varlora::testing::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 24;
  c.embed_dim = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.context_len = 8;
  c.seed = 4;
  return c;
}

std::vector<Example> small_dataset(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tok(4, 23);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    Example e;
    e.tokens = {1, tok(rng), tok(rng), 2, tok(rng), tok(rng), 3};
    e.answer_mask = {0, 0, 0, 0, 1, 1, 1};
    out.push_back(e);
  }
  return out;
}

bool equal_tensors(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) && a.values().size() == b.values().size() &&
         std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

std::map<std::string, std::vector<FactorInstance>> iid_draws(std::size_t n, std::uint64_t seed,
                                                             double shift = 0.0) {
  std::mt19937_64 rng(seed);
  std::map<std::string, std::vector<FactorInstance>> d;
  for (const char* name : {"m0", "m1"})
    for (std::size_t k = 0; k < n; ++k) {
      Tensor b = random_tensor({6, 2}, rng), a = random_tensor({2, 5}, rng);
      for (double& v : b.raw()) v += shift;
      for (double& v : a.raw()) v += shift;
      d[name].push_back({b, a});
    }
  return d;
}

}  // namespace

TEST_CASE("per-example sampling on two examples returns the exact gradients") {
  const ParamSet p = init_params(small_config());
  const AdapterSet probe = init_gaussian_probe(p.config, 2, 0.05, 3);
  const auto data = small_dataset(2, 1);
  SamplingConfig sc;
  sc.n_draws = 2;
  sc.seed = 9;
  const ParamSet before = p;
  const GradientInstanceSet set = sample_instances(p, probe, data, sc);
  CHECK(p == before);
  CHECK(set.n_draws == 2);
  const auto g0 = adapter_grads(p, probe, data[0]);
  const auto g1 = adapter_grads(p, probe, data[1]);
  for (const auto& [name, list] : set.instances) {
    REQUIRE(list.size() == 2);
    const bool direct = equal_tensors(list[0].gB, g0.at(name).gB);
    const auto& first = direct ? g0 : g1;
    const auto& second = direct ? g1 : g0;
    CHECK(equal_tensors(list[0].gB, first.at(name).gB));
    CHECK(equal_tensors(list[0].gA, first.at(name).gA));
    CHECK(equal_tensors(list[1].gB, second.at(name).gB));
    CHECK(equal_tensors(list[1].gA, second.at(name).gA));
  }
}

TEST_CASE("sampling is deterministic and minibatch draws average member gradients") {
  const ParamSet p = init_params(small_config());
  const AdapterSet probe = init_gaussian_probe(p.config, 2, 0.05, 3);
  const auto data = small_dataset(6, 2);
  SamplingConfig sc;
  sc.mode = SamplingMode::kMinibatch;
  sc.minibatch_size = 6;
  sc.n_draws = 3;
  sc.seed = 5;
  const GradientInstanceSet a = sample_instances(p, probe, data, sc);
  const GradientInstanceSet b = sample_instances(p, probe, data, sc);
  for (const auto& [name, list] : a.instances)
    for (std::size_t d = 0; d < list.size(); ++d) {
      CHECK(equal_tensors(list[d].gB, b.instances.at(name)[d].gB));
      CHECK(equal_tensors(list[d].gA, b.instances.at(name)[d].gA));
    }

  // With the whole set in each minibatch every draw is the mean of all members.
  std::map<std::string, AdapterGrad> mean;
  for (const Example& e : data)
    for (const auto& [name, g] : adapter_grads(p, probe, e)) {
      auto it = mean.try_emplace(name, AdapterGrad{Tensor::zeros_like(g.gB), Tensor::zeros_like(g.gA)}).first;
      add_inplace(it->second.gB, scale(g.gB, 1.0 / 6.0));
      add_inplace(it->second.gA, scale(g.gA, 1.0 / 6.0));
    }
  for (const auto& [name, list] : a.instances)
    for (const FactorInstance& f : list) {
      CHECK(max_abs_diff(f.gB, mean.at(name).gB) <= 1e-12);
      CHECK(max_abs_diff(f.gA, mean.at(name).gA) <= 1e-12);
    }

  sc.minibatch_size = 7;
  CHECK_THROWS_AS(sample_instances(p, probe, data, sc), ContractError);
  sc.minibatch_size = 2;
  sc.n_draws = 1;
  CHECK_THROWS_AS(sample_instances(p, probe, data, sc), ContractError);
}

TEST_CASE("full oracle stats use the same draws") {
  const ParamSet p = init_params(small_config());
  const AdapterSet probe = init_gaussian_probe(p.config, 2, 0.05, 3);
  const auto data = small_dataset(3, 3);
  SamplingConfig sc;
  sc.n_draws = 3;
  sc.full_oracle = true;
  const GradientInstanceSet set = sample_instances(p, probe, data, sc);
  MomentAccumulator acc(p.at("head").shape());
  for (const Example& e : data)
    acc.add(per_example_grad(p, &probe, e, GradScope::kWeights).weights.at("head"));
  CHECK(max_abs_diff(fisher(set.full_stats.moments.at("head")), fisher(acc)) <= 1e-15);
  CHECK(set.lora_stats.samples() == 3);
}

TEST_CASE("term norms") {
  std::mt19937_64 rng(8);
  AdapterSet probe;
  probe.emplace("w", AdapterPair{Tensor({4, 2}), random_tensor({2, 3}, rng), 0.05});
  std::map<std::string, std::vector<FactorInstance>> d;
  for (int k = 0; k < 3; ++k) d["w"].push_back({random_tensor({4, 2}, rng), random_tensor({2, 3}, rng)});
  const TermNorms zero_b = term_norms(instances_from(d), probe);
  CHECK(zero_b.b0a0 == 0.0);
  CHECK(zero_b.b0_da == 0.0);
  CHECK(zero_b.db_a0 > 0.0);

  probe.at("w").A = Tensor({2, 3});
  const TermNorms zero_both = term_norms(instances_from(d), probe);
  CHECK(zero_both.b0a0 == 0.0);
  CHECK(zero_both.db_a0 == 0.0);
  CHECK(zero_both.b0_da == 0.0);
  CHECK(zero_both.db_da > 0.0);

  // Planted: B0 = diag-like 2I, A0 = I, dB = 3 e11, dA = 4 e11 -> hand norms.
  AdapterSet planted;
  Tensor B0({2, 2}), A0({2, 2}), dB({2, 2}), dA({2, 2});
  B0(0, 0) = B0(1, 1) = 2.0;
  A0(0, 0) = A0(1, 1) = 1.0;
  dB(0, 0) = 3.0;
  dA(0, 0) = 4.0;
  planted.emplace("w", AdapterPair{B0, A0, 1.0});
  const TermNorms t = term_norms(instances_from({{"w", {{dB, dA}}}}), planted);
  CHECK(std::fabs(t.b0a0 - 2.0 * std::sqrt(2.0)) <= 1e-12);
  CHECK(std::fabs(t.db_a0 - 3.0) <= 1e-12);
  CHECK(std::fabs(t.b0_da - 8.0) <= 1e-12);
  CHECK(std::fabs(t.db_da - 12.0) <= 1e-12);
  CHECK(std::fabs(t.dominance_ratio() - 1.5) <= 1e-12);
}

TEST_CASE("covariance concentration on the iid null") {
  const GradientInstanceSet set = instances_from(iid_draws(500, 11));
  for (CovKind k : {CovKind::kCross, CovKind::kSelfB, CovKind::kSelfA}) {
    const CovarianceSummary s = covariance_summary(set, k);
    CHECK(s.concentration < 0.15);
    CHECK(s.positive_fraction > 0.35);
    CHECK(s.positive_fraction < 0.65);
    std::size_t total = 0, lo = 0, hi = 0;
    const std::size_t bins = s.counts.size();
    for (std::size_t b = 0; b < bins; ++b) {
      total += s.counts[b];
      if (b < bins / 2) lo += s.counts[b];
      if (b > bins / 2) hi += s.counts[b];
    }
    CHECK(total == s.pairs);
    const double imbalance = std::fabs(static_cast<double>(lo) - static_cast<double>(hi)) /
                             static_cast<double>(total);
    CHECK(imbalance < 0.2);
  }
  // Full enumeration below budget: 2 matrices x 12 x 10 cross pairs.
  CHECK(covariance_summary(set, CovKind::kCross).pairs == 240);
  CHECK(covariance_summary(set, CovKind::kSelfB).pairs == 2 * 66);
  CHECK(covariance_summary(set, CovKind::kSelfA, 20).pairs == 20);
}

TEST_CASE("covariance of identical instances vanishes") {
  std::mt19937_64 rng(12);
  const FactorInstance f{random_tensor({3, 2}, rng), random_tensor({2, 3}, rng)};
  const GradientInstanceSet set = instances_from({{"w", {f, f}}});
  for (CovKind k : {CovKind::kCross, CovKind::kSelfB, CovKind::kSelfA}) {
    const CovarianceSummary s = covariance_summary(set, k);
    CHECK(s.mean_abs_cov == 0.0);
    CHECK(s.mean_variance == 0.0);
    CHECK(s.concentration == 0.0);
  }
  CHECK_THROWS_AS(covariance_summary(instances_from({{"w", {f}}}), CovKind::kCross), ContractError);
}

TEST_CASE("expectation audit") {
  const auto zero = expectation_audit(instances_from(iid_draws(4000, 13)));
  for (const AuditEntry& e : zero) {
    CHECK(e.median < 0.01);
    CHECK(e.flagged == 0);
    CHECK(e.elements == 22);
  }
  const auto shifted = expectation_audit(instances_from(iid_draws(4000, 14, 0.3)));
  for (const AuditEntry& e : shifted) CHECK(std::fabs(e.median - 0.09) < 0.03);

  std::mt19937_64 rng(15);
  const FactorInstance c{random_tensor({2, 2}, rng), random_tensor({2, 2}, rng)};
  const auto flagged = expectation_audit(instances_from({{"w", {c, c, c}}}));
  CHECK(flagged[0].flagged == 8);
  CHECK(flagged[0].median == 0.0);
}

TEST_CASE("spearman") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  CHECK(spearman(x, x) == doctest::Approx(1.0));
  const std::vector<double> rev{5, 4, 3, 2, 1};
  CHECK(spearman(x, rev) == doctest::Approx(-1.0));
  const std::vector<double> monotone{1, 8, 27, 64, 125};
  CHECK(spearman(x, monotone) == doctest::Approx(1.0));
  // Ties receive average ranks: ranks (1.5, 1.5, 3) vs (1, 2, 3).
  const std::vector<double> t{0, 0, 1}, u{1, 2, 3};
  CHECK(spearman(t, u) == doctest::Approx(std::sqrt(3.0) / 2.0));

  std::mt19937_64 rng(16);
  std::normal_distribution<double> n;
  std::vector<double> a(4000), b(4000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = n(rng);
    b[i] = n(rng);
  }
  CHECK(std::fabs(spearman(a, b)) < 0.05);
}

TEST_CASE("factorization fit on identical and random maps") {
  std::mt19937_64 rng(17);
  Tensor o = abs(random_tensor({20, 30}, rng));
  const auto same = factorization_fit({{"w", o}}, {{"w", o}});
  CHECK(same[0].spearman == doctest::Approx(1.0));
  CHECK(same[0].log_ratio_max_abs == 0.0);
  CHECK(same[0].compared == 600);
  const auto rnd = factorization_fit({{"w", abs(random_tensor({20, 30}, rng))}}, {{"w", o}});
  CHECK(std::fabs(rnd[0].spearman) < 0.15);
  CHECK_THROWS_AS(factorization_fit({{"w", o}}, {{"v", o}}), ContractError);
}

TEST_CASE("exactly factorizing rank-1 stream is reproduced by the factor product") {
  // Full factorial of symmetric factor sets: every (b, a) pair appears once,
  // so gW = b a has zero mean and Var gW = Var b * Var a elementwise.
  std::mt19937_64 rng(18);
  const std::size_t m = 5, n = 4, k = 6;
  std::vector<Tensor> bs, as;
  for (std::size_t i = 0; i < k; ++i) {
    const Tensor b = random_tensor({m, 1}, rng), a = random_tensor({1, n}, rng);
    bs.push_back(b);
    bs.push_back(scale(b, -1.0));
    as.push_back(a);
    as.push_back(scale(a, -1.0));
  }
  std::vector<FactorInstance> draws;
  MomentAccumulator full({m, n});
  for (const Tensor& b : bs)
    for (const Tensor& a : as) {
      draws.push_back({b, a});
      full.add(matmul(b, a));
    }
  const GradientInstanceSet set = instances_from({{"w", draws}});
  const Tensor approx = statistic_map(set.lora_stats, Method::kVila).at("w");
  const Tensor oracle = variance(full);
  CHECK(max_abs_diff(approx, oracle) <= 1e-10);
  const auto fit = factorization_fit({{"w", approx}}, {{"w", oracle}});
  CHECK(std::fabs(fit[0].spearman - 1.0) <= 1e-10);
  CHECK(fit[0].log_ratio_max_abs <= 1e-8);
}
