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

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "varlora/datagen.hpp"
#include "varlora/errors.hpp"
#include "varlora/eval.hpp"

using namespace varlora;
using varlora::testing::ks_oracle;
using varlora::testing::lcs_oracle;

TEST_CASE("KS statistic and p-value match the brute-force oracle") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> size(3, 30), val(0, 20);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(size(rng)), y(size(rng));
    const bool ties = trial % 2 == 0;
    for (double& v : x) v = ties ? val(rng) : nd(rng);
    for (double& v : y) v = ties ? val(rng) + 2 : nd(rng) + 0.5;
    const KsResult got = ks_two_sample(x, y), want = ks_oracle(x, y);
    CHECK(got.statistic == want.statistic);
    CHECK(std::fabs(got.statistic - want.statistic) <= 1e-15);
    CHECK(std::fabs(got.p_value - want.p_value) <= 1e-6);
  }
}

TEST_CASE("KS edge cases and invariants") {
  const std::vector<double> a{1, 2, 3, 4}, b{3, 4, 5, 6};
  CHECK(ks_two_sample(a, a).statistic == 0.0);
  CHECK(ks_two_sample(a, a).p_value == 1.0);
  CHECK(ks_two_sample(a, std::vector<double>{10, 11}).statistic == 1.0);
  CHECK(ks_two_sample(a, b).statistic == ks_oracle(a, b).statistic);
  CHECK(ks_two_sample(a, b).statistic == 0.5);
  std::vector<double> ea, eb;
  for (double v : a) ea.push_back(std::exp(3 * v));
  for (double v : b) eb.push_back(std::exp(3 * v));
  CHECK(ks_two_sample(ea, eb).statistic == 0.5);
  CHECK_THROWS_AS(ks_two_sample(a, std::vector<double>{}), ContractError);
  double prev = 2.0;
  for (double lam = 0.1; lam < 3.0; lam += 0.05) {
    const double q = kolmogorov_q(lam);
    CHECK(q <= prev);
    CHECK(q > 0.0);
    prev = q;
  }
}

TEST_CASE("ROUGE-L matches the LCS oracle") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> len(0, 12), tok(0, 5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> c(len(rng)), r(len(rng));
    for (int& v : c) v = tok(rng);
    for (int& v : r) v = tok(rng);
    const std::size_t l = lcs_oracle(c, r);
    CHECK(lcs_length(c, r) == l);
    double want = 0.0;
    if (!c.empty() && !r.empty() && l > 0) {
      const double p = static_cast<double>(l) / c.size(), rc = static_cast<double>(l) / r.size();
      want = 2 * p * rc / (p + rc);
    }
    CHECK(rouge_l_f1(c, r) == want);
  }
  const std::vector<int> cand{1, 2, 3, 4}, ref{1, 3, 4, 5};
  CHECK(rouge_l_f1(cand, ref) == 0.75);
  CHECK(rouge_l_f1(cand, cand) == 1.0);
  CHECK(rouge_l_f1(cand, std::vector<int>{7, 8}) == 0.0);
  CHECK(rouge_l_f1(std::vector<int>{}, ref) == 0.0);
}

TEST_CASE("utility composite") {
  CHECK(harmonic_mean(1.0, 1.0) == 1.0);
  CHECK(harmonic_mean(0.8, 0.0) == 0.0);
  CHECK(std::fabs(harmonic_mean(0.8, 0.4) - 2 * 0.8 * 0.4 / 1.2) <= 1e-15);

  const Corpus corpus = generate(CorpusSpec{.n_entities = 3, .qa_per_entity = 2});
  ParamSet p = init_params(ModelConfig{});
  p.at("head") = Tensor::zeros_like(p.at("head"));
  const UtilityParts u = model_utility(p, corpus.examples);
  CHECK(std::fabs(u.answer_prob - 1.0 / 256.0) <= 1e-12);
  CHECK(u.rouge == 0.0);
  CHECK(u.utility == 0.0);
}

TEST_CASE("forget quality") {
  const Corpus corpus = generate(CorpusSpec{.n_entities = 6, .qa_per_entity = 4});
  const ParamSet a = init_params(ModelConfig{.seed = 1});
  CHECK(forget_quality(a, a, corpus.examples) == 0.0);
  const ParamSet b = init_params(ModelConfig{.seed = 2});
  std::vector<Example> shuffled = corpus.examples;
  std::mt19937_64 rng(3);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(forget_quality(a, b, corpus.examples) == forget_quality(a, b, shuffled));
  CHECK(forget_quality(a, b, corpus.examples) <= 0.0);
}

TEST_CASE("selection under the utility floor") {
  auto rep = [](double fq, double u) {
    MetricReport r;
    r.forget_quality = fq;
    r.know_utility = u;
    return r;
  };
  const std::vector<MetricReport> one{rep(-3.0, 0.96)};
  CHECK(select_best(one, 1.0) == 0u);
  const std::vector<MetricReport> excluded{rep(-0.1, 0.90), rep(-2.0, 0.97), rep(-1.0, 0.951)};
  CHECK(select_best(excluded, 1.0) == 2u);
  const std::vector<MetricReport> none{rep(-0.1, 0.5)};
  CHECK_FALSE(select_best(none, 1.0).has_value());
  CHECK_THROWS_AS(select_best(std::vector<MetricReport>{}, 1.0), ContractError);

  // Enumeration oracle over a random table.
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.8, 1.1), f(-5.0, 0.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<MetricReport> table;
    for (int i = 0; i < 15; ++i) table.push_back(rep(std::round(f(rng)), u(rng)));
    std::optional<std::size_t> want;
    for (std::size_t i = 0; i < table.size(); ++i) {
      if (table[i].know_utility < 0.95) continue;
      bool dominated = false;
      for (std::size_t j = 0; j < table.size(); ++j)
        if (table[j].know_utility >= 0.95 &&
            (table[j].forget_quality > table[i].forget_quality ||
             (table[j].forget_quality == table[i].forget_quality && j < i)))
          dominated = true;
      if (!dominated) want = i;
    }
    const auto got = select_best(table, 1.0);
    CHECK(got == want);
    if (got) CHECK(table[*got].know_utility >= 0.95);
  }
}
