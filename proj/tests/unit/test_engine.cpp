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

#include <atomic>

#include "qrefine/engine.hpp"
#include "qrefine/errors.hpp"

using namespace qrefine;
using Kind = ScriptedGenerator::MatchKind;

namespace {

void script(ScriptedGenerator& gen, Kind kind, std::string pattern, std::vector<std::string> texts) {
  ScriptedGenerator::Entry e;
  e.kind = kind;
  e.pattern = std::move(pattern);
  for (auto& t : texts) e.continuations.push_back(gen.make_continuation(t));
  gen.add(std::move(e));
}

// One document per query, titled with the query itself.
class EchoRetriever final : public Retriever {
 public:
  std::atomic<int> calls{0};
  int docs = 1;
  std::vector<Document> retrieve(std::string_view query, int k) override {
    ++calls;
    std::vector<Document> out;
    for (int i = 0; i < docs; ++i) {
      out.push_back(Document{std::string(query) + (i ? " " + std::to_string(i) : ""), "about " + std::string(query),
                             "loc-" + std::string(query) + "-" + std::to_string(i), i + 1, 0.0});
    }
    if (static_cast<int>(out.size()) > k) out.resize(static_cast<std::size_t>(k));
    return out;
  }
};

class FailingRetriever final : public Retriever {
 public:
  std::vector<Document> retrieve(std::string_view, int) override {
    throw Error(Errc::SearchUnavailable, "offline");
  }
};

SearchConfig config(int width, int depth) {
  SearchConfig c;
  c.width = width;
  c.max_depth = depth;
  c.top_k = 2;
  c.decode.temperature = 0.0;
  return c;
}

// Width 2, depth 2, every node scripted.
ScriptedGenerator hand_tree() {
  ScriptedGenerator gen(-0.5);
  script(gen, Kind::Suffix, "about r2\n[/R_EVIDENCE]\n[A_RESPONSE] ", {"forced-r2"});
  script(gen, Kind::Suffix, "about d2\n[/R_EVIDENCE]\n[A_RESPONSE] ", {"forced-d2"});
  script(gen, Kind::Suffix, "about r1\n[/R_EVIDENCE]\n", {"[A_RESPONSE] ans-r1", "[S_REWRITE] r2"});
  script(gen, Kind::Suffix, "about d1\n[/R_EVIDENCE]\n", {"[S_DECOMPOSE] d2", "[A_RESPONSE] ans-d1"});
  script(gen, Kind::Exact, "Q\n", {"[S_REWRITE] r1", "[S_DECOMPOSE] d1"});
  return gen;
}

std::string path_of(const Trajectory& t) {
  std::string s;
  for (const auto& step : t.steps) s += std::string(action_name(step.action)) + ":" + step.query + " ";
  return s + "=> " + t.final_answer;
}

}  // namespace

TEST_SUITE("engine") {
  TEST_CASE("answer at the root gives a single zero-step trajectory") {
    ScriptedGenerator gen;
    script(gen, Kind::Any, "", {"[A_RESPONSE] 4"});
    EchoRetriever retriever;
    RunStats stats;
    const auto trajs = run("2+2?", config(1, 2), gen, retriever, &stats);
    REQUIRE(trajs.size() == 1);
    CHECK(trajs[0].steps.empty());
    CHECK(trajs[0].final_answer == "4");
    CHECK(retriever.calls == 0);
    CHECK(stats.generator_calls == 1);
    REQUIRE(trajs[0].generated_tokens.size() == 2);
    CHECK(trajs[0].answer_start == 1);
  }

  TEST_CASE("width three expands three distinct branches") {
    ScriptedGenerator gen;
    script(gen, Kind::Any, "", {"[S_REWRITE] q1", "[S_DECOMPOSE] q2", "[A_RESPONSE] a"});
    EchoRetriever retriever;
    TreeNode root;
    root.partial.input = "Q";
    RunStats stats;
    const auto children = expand(root, config(3, 2), gen, retriever, &stats);
    REQUIRE(children.size() == 3);
    CHECK_FALSE(children[0].terminal);
    CHECK(children[0].partial.steps.size() == 1);
    CHECK(children[0].depth == 1);
    CHECK(children[1].partial.steps[0].action == ActionKind::Decompose);
    CHECK(children[2].terminal);
    CHECK(children[2].partial.steps.empty());
    CHECK(retriever.calls == 2);
  }

  TEST_CASE("identical continuations collapse") {
    ScriptedGenerator gen;
    script(gen, Kind::Any, "", {"[S_REWRITE] q1", "[S_REWRITE] q1", "[A_RESPONSE] a"});
    EchoRetriever retriever;
    TreeNode root;
    root.partial.input = "Q";
    RunStats stats;
    const auto children = expand(root, config(3, 2), gen, retriever, &stats);
    CHECK(children.size() == 2);
    CHECK(stats.duplicates_collapsed == 1);
    CHECK(retriever.calls == 1);
  }

  TEST_CASE("depth zero never retrieves") {
    ScriptedGenerator gen;
    script(gen, Kind::Any, "", {"[A_RESPONSE] x", "[S_REWRITE] q", "[A_RESPONSE] y"});
    EchoRetriever retriever;
    RunStats stats;
    const auto trajs = run("Q", config(3, 0), gen, retriever, &stats);
    REQUIRE(trajs.size() == 1);
    CHECK(trajs[0].steps.empty());
    CHECK(trajs[0].final_answer == "x");
    CHECK(retriever.calls == 0);
    CHECK(stats.forced_answers == 1);
  }

  TEST_CASE("width 2 depth 2 matches the hand-enumerated tree") {
    auto gen = hand_tree();
    EchoRetriever retriever;
    RunStats stats;
    const auto trajs = run("Q", config(2, 2), gen, retriever, &stats);
    std::vector<std::string> paths;
    for (const auto& t : trajs) paths.push_back(path_of(t));
    const std::vector<std::string> expected = {
        "rewrite:r1 => ans-r1",
        "rewrite:r1 rewrite:r2 => forced-r2",
        "decompose:d1 decompose:d2 => forced-d2",
        "decompose:d1 => ans-d1",
    };
    CHECK(paths == expected);
    CHECK(stats.generator_calls == 5);
    CHECK(stats.forced_answers == 2);
    CHECK(stats.retrieval_calls == 4);
    CHECK(retriever.calls == 4);
    CHECK(stats.generator_calls <= max_generator_calls(2, 2));
    for (const auto& t : trajs) {
      CHECK(t.steps.size() <= 2);
      CHECK(validate(t, config(2, 2).limits()).empty());
      for (std::size_t i = 0; i < t.steps.size(); ++i) CHECK(t.steps[i].turn == static_cast<int>(i) + 1);
    }
    // Forced answers carry only the answer tokens after the last step.
    const Trajectory& forced = trajs[1];
    CHECK(forced.answer_start == forced.generated_tokens.size() - 1);
    CHECK(forced.generated_tokens.back().text == "forced-r2");
  }

  TEST_CASE("serial and concurrent runs are identical") {
    auto gen = hand_tree();
    EchoRetriever retriever;
    retriever.docs = 3;
    auto serial = config(2, 2);
    auto concurrent = serial;
    concurrent.workers = 4;
    for (int i = 0; i < 10; ++i) {
      const auto a = run("Q", serial, gen, retriever);
      const auto b = run("Q", concurrent, gen, retriever);
      REQUIRE(a == b);
      for (std::size_t j = 0; j < a.size(); ++j) CHECK(render(a[j]) == render(b[j]));
      for (const auto& t : a)
        for (const auto& s : t.steps) CHECK(s.documents.size() <= 2);
    }
  }

  TEST_CASE("call bound") {
    CHECK(max_generator_calls(2, 2) == 7);
    CHECK(max_generator_calls(3, 0) == 1);
    CHECK(max_generator_calls(1, 4) == 5);
    CHECK(max_generator_calls(3, 2) == 1 + 3 + 9);
  }

  TEST_CASE("budget exhaustion drops branches, not the run") {
    auto gen = hand_tree();
    EchoRetriever retriever;
    auto c = config(2, 2);
    c.call_budget = 2;
    RunStats stats;
    const auto trajs = run("Q", c, gen, retriever, &stats);
    CHECK(stats.generator_calls == 2);
    REQUIRE(trajs.size() == 1);
    CHECK(trajs[0].final_answer == "ans-r1");
    bool saw_budget = false;
    for (const auto& d : stats.dropped) saw_budget |= d.find("BudgetExhausted") != std::string::npos;
    CHECK(saw_budget);
  }

  TEST_CASE("failures") {
    ScriptedGenerator only_search;
    script(only_search, Kind::Any, "", {"[S_REWRITE] q"});
    FailingRetriever offline;
    try {
      run("Q", config(1, 2), only_search, offline);
      FAIL("expected NoTrajectory");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::NoTrajectory);
    }

    ScriptedGenerator empty;
    EchoRetriever retriever;
    try {
      run("Q", config(1, 2), empty, retriever);
      FAIL("expected GeneratorError");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::GeneratorError);
    }

    ScriptedGenerator garbage;
    script(garbage, Kind::Any, "", {"no control token here"});
    RunStats stats;
    CHECK_THROWS_AS(run("Q", config(1, 2), garbage, retriever, &stats), Error);

    auto bad = config(0, 2);
    CHECK_THROWS_AS(check_config(bad), Error);
    bad = config(1, -1);
    CHECK_THROWS_AS(check_config(bad), Error);
    CHECK_THROWS_AS(run("", config(1, 1), garbage, retriever), Error);
  }

  TEST_CASE("evidence scoring fills evidence log-probs") {
    auto gen = hand_tree();
    EchoRetriever retriever;
    auto c = config(2, 1);
    c.score_evidence = true;
    script(gen, Kind::Suffix, "[A_RESPONSE] ", {"leaf"});
    const auto trajs = run("Q", c, gen, retriever);
    REQUIRE(trajs.size() == 2);
    for (const auto& t : trajs) {
      CHECK_FALSE(t.evidence_log_probs.empty());
      for (double lp : t.evidence_log_probs) CHECK(lp == -0.5);
    }
  }

  TEST_CASE("trajectory record") {
    auto gen = hand_tree();
    EchoRetriever retriever;
    const auto trajs = run("Q", config(2, 2), gen, retriever);
    const auto rec = trajectory_record(trajs[1], 1.5, -0.5);
    CHECK(rec["question"] == "Q");
    CHECK(rec["steps"].size() == 2);
    CHECK(rec["steps"][0]["action"] == "rewrite");
    CHECK(rec["answer"] == "forced-r2");
    CHECK(rec["ppl"] == 1.5);
    CHECK(trajectory_record(trajs[0], std::nullopt, std::nullopt)["ppl"].is_null());
  }

  TEST_CASE("source and strategy names") {
    for (auto s : {SourceKind::Bm25Corpus, SourceKind::EmbeddingCandidates, SourceKind::WebSearch})
      CHECK(source_from_name(source_name(s)) == s);
    for (auto s : {Strategy::Ppl, Strategy::Confidence, Strategy::Ensemble})
      CHECK(strategy_from_name(strategy_name(s)) == s);
    CHECK_FALSE(strategy_from_name("vote").has_value());
  }
}
