/*
 * Copyright 2026 The qrefine Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <doctest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "qrefine/errors.hpp"
#include "qrefine/selection.hpp"
#include "qrefine/text.hpp"

using namespace qrefine;

namespace {

Trajectory with_tokens(std::vector<double> lps, std::size_t answer_start, std::string answer = "a") {
  Trajectory t;
  t.input = "q";
  for (std::size_t i = 0; i < lps.size(); ++i) t.generated_tokens.push_back({"t" + std::to_string(i), lps[i]});
  t.answer_start = answer_start;
  t.final_answer = std::move(answer);
  return t;
}

ScoredTrajectory scored(std::string answer, double conf, double ppl = 1.0) {
  ScoredTrajectory s;
  s.trajectory.final_answer = answer;
  s.confidence = conf;
  s.ppl = ppl;
  s.answer_norm = normalize_answer(answer);
  return s;
}

std::vector<ScoredTrajectory> with_ppls(std::vector<double> ppls) {
  std::vector<ScoredTrajectory> out;
  for (double p : ppls) out.push_back(scored("x", 0.0, p));
  return out;
}

std::vector<ScoredTrajectory> with_confs(std::vector<double> confs) {
  std::vector<ScoredTrajectory> out;
  for (std::size_t i = 0; i < confs.size(); ++i) out.push_back(scored("x" + std::to_string(i), confs[i]));
  return out;
}

}  // namespace

TEST_SUITE("selection") {
  TEST_CASE("perplexity worked examples") {
    CHECK(perplexity(with_tokens({0.0, 0.0}, 1)) == 1.0);
    CHECK(perplexity(with_tokens({-0.5, -1.5}, 1)) == doctest::Approx(std::exp(1.0)).epsilon(1e-12));
    for (std::size_t len : {1u, 3u, 17u})
      CHECK(perplexity(with_tokens(std::vector<double>(len, -0.7), 0)) == doctest::Approx(std::exp(0.7)));
    CHECK_THROWS_AS(perplexity(Trajectory{}), Error);
  }

  TEST_CASE("perplexity scope") {
    Trajectory t = with_tokens({-1.0}, 0);
    t.evidence_log_probs = {-3.0};
    CHECK(perplexity(t, PplScope::GeneratedOnly) == doctest::Approx(std::exp(1.0)));
    CHECK(perplexity(t, PplScope::FullSequence) == doctest::Approx(std::exp(2.0)));
  }

  TEST_CASE("confidence covers the answer span only") {
    CHECK(confidence(with_tokens({0.0}, 0)) == 0.0);
    CHECK(confidence(with_tokens({-5.0, -0.1, -0.2}, 1)) == doctest::Approx(-0.3));
    CHECK(confidence(with_tokens({-0.01, -0.1, -0.2}, 1)) == doctest::Approx(-0.3));
    CHECK(confidence(with_tokens({-5.0, -0.1, -0.2}, 1), true) == doctest::Approx(-0.15));
    try {
      confidence(with_tokens({-1.0}, 1));
      FAIL("expected EmptyAnswerSpan");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::EmptyAnswerSpan);
    }
  }

  TEST_CASE("sequence nll") {
    const std::vector<double> zero = {0.0};
    const std::vector<double> four = {-1.0, -1.0, -1.0, -1.0};
    CHECK(sequence_nll(zero) == 0.0);
    CHECK(sequence_nll(four) == doctest::Approx(4.0));
    CHECK_THROWS_AS(sequence_nll(std::span<const double>{}), Error);
    const std::vector<double> lps = {-0.3, -1.2, -0.05, -2.5};
    const Trajectory t = with_tokens(lps, 0);
    CHECK(sequence_nll(lps) == doctest::Approx(lps.size() * std::log(perplexity(t))).epsilon(1e-12));
  }

  TEST_CASE("random trajectories agree with the reference") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> lp(-6.0, 0.0);
    std::uniform_int_distribution<int> len(1, 40);
    for (int i = 0; i < 1000; ++i) {
      std::vector<double> lps(static_cast<std::size_t>(len(rng)));
      for (auto& x : lps) x = lp(rng);
      const std::size_t start = rng() % lps.size();
      const Trajectory t = with_tokens(lps, start);
      CHECK(oracle::close_rel(perplexity(t), oracle::perplexity(lps), 1e-9));
      CHECK(oracle::close_rel(confidence(t), oracle::answer_sum(lps, start), 1e-9));
    }
  }

  TEST_CASE("argmin and argmax selection") {
    CHECK(select_ppl_index(with_ppls({2.1, 1.3, 5.0})) == 1);
    CHECK(select_ppl_index(with_ppls({4.0})) == 0);
    CHECK(select_ppl_index(with_ppls({3.0, 1.0, 1.0})) == 1);
    CHECK(select_confidence_index(with_confs({-0.3, -0.1, -2.0})) == 1);
    CHECK(select_confidence_index(with_confs({-0.1, -0.1})) == 0);
    CHECK(select_confidence_index(with_confs({-0.3 + 5, -0.1 + 5, -2.0 + 5})) == 1);
    CHECK_THROWS_AS(select_ppl_index({}), Error);
    CHECK_THROWS_AS(select_confidence_index({}), Error);

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(1.0, 3.0);
    for (int i = 0; i < 200; ++i) {
      std::vector<double> ppls(1 + rng() % 8), confs(ppls.size());
      for (auto& p : ppls) p = std::round(u(rng) * 4) / 4;
      for (auto& c : confs) c = -std::round(u(rng) * 4) / 4;
      CHECK(select_ppl_index(with_ppls(ppls)) == oracle::argmin(ppls));
      CHECK(select_confidence_index(with_confs(confs)) == oracle::argmax(confs));
    }
  }

  TEST_CASE("raising answer log-probs never lowers the confidence rank") {
    std::vector<Trajectory> ts = {with_tokens({-1.0, -0.9}, 1), with_tokens({-0.2, -0.5}, 1),
                                  with_tokens({-0.1, -0.7}, 1)};
    auto pick = [&] { return select_confidence_index(score_all(ts)); };
    CHECK(pick() == 1);
    ts[0].generated_tokens[1].log_prob = -0.4;
    CHECK(pick() == 0);
  }

  TEST_CASE("ensemble accumulation domains diverge") {
    const std::vector<ScoredTrajectory> trajs = {scored("A", -1.0), scored("B", -0.5), scored("A", -0.7)};
    const auto prob = select_ensemble_detail(trajs, EnsembleDomain::Probability);
    CHECK(prob.representative == "A");
    CHECK(prob.mass == doctest::Approx(std::exp(-1.0) + std::exp(-0.7)));
    CHECK(prob.members == 2);
    CHECK(std::fabs(prob.mass - 0.8645) < 1e-4);
    const auto logsum = select_ensemble_detail(trajs, EnsembleDomain::LogSum);
    CHECK(logsum.representative == "B");
    CHECK(logsum.mass == doctest::Approx(-0.5));
  }

  TEST_CASE("ensemble grouping and ties") {
    const std::vector<ScoredTrajectory> norm = {scored("The Paris", -2.0), scored("London", -1.5),
                                                scored("paris.", -1.0)};
    CHECK(select_ensemble(norm) == "paris");
    CHECK(select_ensemble_detail(norm).representative == "The Paris");
    CHECK(select_ensemble(norm, EnsembleDomain::Probability, GroupKey::Raw) == "paris.");

    const std::vector<ScoredTrajectory> tie = {scored("x", -1.0), scored("y", -1.0)};
    CHECK(select_ensemble(tie) == "x");
    std::vector<ScoredTrajectory> flipped(tie.rbegin(), tie.rend());
    CHECK(select_ensemble(flipped) == "y");

    std::vector<ScoredTrajectory> perm = {scored("a", -0.2), scored("b", -0.1), scored("a", -0.3),
                                          scored("c", -0.05)};
    const std::string expected = select_ensemble(perm);
    std::sort(perm.begin(), perm.end(), [](const auto& l, const auto& r) { return l.confidence < r.confidence; });
    do {
      CHECK(select_ensemble(perm) == expected);
    } while (std::next_permutation(perm.begin(), perm.end(),
                                   [](const auto& l, const auto& r) { return l.confidence < r.confidence; }));
    CHECK_THROWS_AS(select_ensemble({}), Error);
  }

  TEST_CASE("score_all skips unscorable trajectories") {
    std::vector<Trajectory> ts = {with_tokens({-1.0}, 0), Trajectory{}, with_tokens({-1.0}, 1)};
    const auto s = score_all(ts);
    REQUIRE(s.size() == 1);
    CHECK(s[0].ppl == doctest::Approx(std::exp(1.0)));
    CHECK(s[0].confidence == doctest::Approx(-1.0));
  }

  TEST_CASE("upper bound") {
    const AnswerMetric exact = [](std::string_view pred, std::span<const std::string> gold) {
      return std::find(gold.begin(), gold.end(), std::string(pred)) != gold.end();
    };
    const std::vector<ScoredTrajectory> trajs = {scored("London", -1.0), scored("Paris", -2.0)};
    const std::vector<std::string> paris = {"Paris"};
    const std::vector<std::string> rome = {"Rome"};
    CHECK(upper_bound(trajs, paris, exact));
    CHECK_FALSE(upper_bound(trajs, rome, exact));
    CHECK_THROWS_AS(upper_bound(trajs, std::span<const std::string>{}, exact), Error);
  }
}
