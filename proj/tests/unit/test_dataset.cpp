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

#include <sstream>

#include "fixtures.hpp"
#include "qrefine/dataset.hpp"
#include "qrefine/errors.hpp"

using namespace qrefine;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::RuntimeFailure;
}

struct Toy {
  CorpusIndex index{testing::toy_corpus()};
  Bm25Retriever retriever{index};
  testing::StubAnnotator annotator;
  BuildConfig config;
};

std::size_t retained(const std::vector<AugmentedInstance>& v) {
  std::size_t n = 0;
  for (const auto& i : v) n += i.answer_provenance == AnswerProvenance::OriginalRetained;
  return n;
}

}  // namespace

TEST_SUITE("dataset") {
  TEST_CASE("classification by source") {
    const auto sources = SourceMap::defaults();
    RawInstance r;
    r.source = "HotpotQA";
    CHECK(classify(r, sources) == Category::MultiHop);
    r.source = "arc-challenge";
    CHECK(classify(r, sources) == Category::MultiTurn);
    r.source = "asqa";
    CHECK(classify(r, sources) == Category::Ambiguous);
    r.category = Category::MultiHop;
    CHECK(classify(r, sources) == Category::MultiHop);
    r.category.reset();
    r.source = "";
    CHECK(code_of([&] { classify(r, sources); }) == Errc::UnknownSource);
    r.source = "triviaqa";
    CHECK(code_of([&] { classify(r, sources); }) == Errc::UnknownSource);
    CHECK(sources.is_passthrough("Open-Orca"));
    CHECK_FALSE(sources.is_passthrough("asqa"));
  }

  TEST_CASE("templates and prompts") {
    CHECK(fill_template("{A} and {B} and {C}", {{"A", "1"}, {"B", "{A}"}}) == "1 and {A} and {C}");
    const BuildConfig config;
    RawInstance r;
    r.x_origin = "Who won?";
    const std::string amb = annotation_prompt(r, Category::Ambiguous, config);
    CHECK(amb.find("Who won?") != std::string::npos);
    CHECK(amb.find("{Original Question}") == std::string::npos);
    CHECK(amb.find("{In context examples}") == std::string::npos);
    r.candidates = {{"T", "snippet text", "id", 1, 0}};
    const std::string mh = annotation_prompt(r, Category::MultiHop, config);
    CHECK(mh.find("[1] T: snippet text") != std::string::npos);
    CHECK(mh.size() > 200);
  }

  TEST_CASE("conversation split") {
    auto [h, q] = split_conversation("User: hi\nAssistant: hello\nUser: what is 2+2?");
    CHECK(h == "User: hi\nAssistant: hello");
    CHECK(q == "what is 2+2?");
    auto [h2, q2] = split_conversation("  plain question ");
    CHECK(h2.empty());
    CHECK(q2 == "plain question");
  }

  TEST_CASE("refinement replies") {
    auto no = parse_refinement_reply(Category::MultiTurn, "no", 1, "thanks");
    CHECK_FALSE(no.retrieval_needed);
    CHECK(no.queries.empty());

    auto yes = parse_refinement_reply(Category::MultiTurn, "Retrieval Necessity: yes\nQuery For Search Engine:\nmoon orbit", 1, "q");
    CHECK(yes.retrieval_needed);
    REQUIRE(yes.queries.size() == 1);
    CHECK(yes.queries[0].first == ActionKind::Rewrite);
    CHECK(yes.queries[0].second == "moon orbit");

    auto bare_yes = parse_refinement_reply(Category::MultiTurn, "Yes.", 1, " the current query ");
    REQUIRE(bare_yes.queries.size() == 1);
    CHECK(bare_yes.queries[0].second == "the current query");

    auto two = parse_refinement_reply(Category::MultiHop, "1. first hop\n2. second hop", 3, "");
    REQUIRE(two.queries.size() == 2);
    CHECK(two.queries[0].first == ActionKind::Decompose);
    CHECK(two.queries[1].second == "second hop");

    auto capped = parse_refinement_reply(Category::MultiHop, "a\nb\nc\nd", 3, "");
    CHECK(capped.queries.size() == 3);

    auto dis = parse_refinement_reply(Category::Ambiguous, "- which jaguar?", 1, "");
    CHECK(dis.queries[0].first == ActionKind::Disambiguate);
    CHECK(dis.queries[0].second == "which jaguar?");

    CHECK(code_of([] { parse_refinement_reply(Category::MultiHop, "Here are the decomposed queries:\nfirst\nsecond", 3, ""); }) ==
          Errc::FormatViolation);
    CHECK(code_of([] { parse_refinement_reply(Category::MultiHop, "I'm sorry, I cannot do that.", 3, ""); }) ==
          Errc::AnnotatorRefusal);
    CHECK(code_of([] { parse_refinement_reply(Category::MultiHop, "   ", 3, ""); }) == Errc::FormatViolation);
    CHECK(code_of([] { parse_refinement_reply(Category::MultiHop, "a\n\nb", 3, ""); }) == Errc::FormatViolation);
    CHECK(code_of([] { parse_refinement_reply(Category::MultiTurn, "maybe", 1, "q"); }) == Errc::FormatViolation);
  }

  TEST_CASE("annotation through the stub") {
    Toy toy;
    RawInstance r;
    r.id = "x";
    r.source = "asqa";
    r.x_origin = "Who created Python?";
    auto refs = annotate_refinements(r, Category::Ambiguous, toy.annotator, toy.config);
    REQUIRE(refs.queries.size() == 1);
    CHECK(refs.queries[0].second == "Which specific reading is meant by: Who created Python?");
    r.x_origin = "REFUSE this";
    CHECK(code_of([&] { annotate_refinements(r, Category::Ambiguous, toy.annotator, toy.config); }) ==
          Errc::AnnotatorRefusal);
    r.x_origin = "PREAMBLE please";
    CHECK(code_of([&] { annotate_refinements(r, Category::MultiHop, toy.annotator, toy.config); }) ==
          Errc::FormatViolation);
  }

  TEST_CASE("regeneration echoes the first context") {
    Toy toy;
    RawInstance r;
    r.x_origin = "How long is a lunar orbit?";
    std::vector<SearchStep> steps(1);
    steps[0].query = "moon orbit";
    steps[0].documents = {{"Moon", "The Moon orbits the Earth roughly every twenty seven days.", "d02", 1, 0}};
    const std::string prompt = regeneration_prompt(r, steps, toy.config);
    CHECK(prompt.find("[1] Title: Moon\nThe Moon orbits") != std::string::npos);
    CHECK(regenerate_answer(r, steps, toy.annotator, toy.config) == steps[0].documents[0].snippet);
    CHECK(regenerate_answer(r, {}, toy.annotator, toy.config) == "No context was needed for this reply.");
  }

  TEST_CASE("toy pool builds twelve valid instances") {
    Toy toy;
    const auto pool = testing::toy_pool();
    const auto result = build_pool(pool, toy.config, toy.annotator, toy.retriever, "hash");
    CHECK(result.dropped.empty());
    REQUIRE(result.kept.size() == 12);
    CHECK(result.passthrough.empty());
    CHECK(result.manifest["kept"] == 12);
    CHECK(result.manifest["categories"]["multi_hop"] == 4);
    CHECK(result.manifest["categories"]["ambiguous"] == 4);
    CHECK(result.manifest["categories"]["multi_turn"] == 4);
    for (const auto& inst : result.kept) {
      const Trajectory t = to_trajectory(inst);
      const std::size_t depth = inst.category == Category::MultiHop ? 3 : 1;
      CHECK(validate(t, SearchLimits{depth, 3}).empty());
      CHECK(structurally_equal(parse(render(t)), t));
      const auto back = instance_from_record(instance_record(inst));
      CHECK(structurally_equal(to_trajectory(back), t));
      CHECK(back.category == inst.category);
      CHECK(back.raw.id == inst.raw.id);
      if (inst.category == Category::MultiHop) {
        CHECK(inst.steps.size() == 2);
        CHECK(support_aligned(inst.raw.support_ids, inst.steps));
      }
    }
    const auto& hello = result.kept[9];
    CHECK(hello.raw.id == "mt-2");
    CHECK_FALSE(hello.retrieval_needed);
    CHECK(hello.steps.empty());
  }

  TEST_CASE("alignment, passthrough and drops") {
    Toy toy;
    auto pool = testing::toy_pool();
    pool[0].support_ids.push_back("never-retrieved");
    pool[4].x_origin = "REFUSE to answer";
    RawInstance lima;
    lima.id = "inst-1";
    lima.source = "lima";
    lima.x_origin = "Write a haiku.";
    lima.y_origin = "...";
    pool.push_back(lima);
    RawInstance unknown = lima;
    unknown.id = "u-1";
    unknown.source = "mystery";
    pool.push_back(unknown);
    const auto result = build_pool(pool, toy.config, toy.annotator, toy.retriever, "h");
    CHECK(result.kept.size() == 10);
    CHECK(result.passthrough.size() == 1);
    REQUIRE(result.dropped.size() == 3);
    CHECK(result.manifest["drops"]["AlignmentMismatch"] == 1);
    CHECK(result.manifest["drops"]["AnnotatorRefusal"] == 1);
    CHECK(result.manifest["drops"]["UnknownSource"] == 1);
  }

  TEST_CASE("retention flips exactly floor(ratio * N) answers") {
    Toy toy;
    const auto built = build_pool(testing::toy_pool(), toy.config, toy.annotator, toy.retriever, "h").kept;
    for (double ratio : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const auto out = apply_retention(built, ratio, 99);
      CHECK(retained(out) == static_cast<std::size_t>(std::floor(ratio * 12)));
      for (const auto& inst : out) {
        if (inst.answer_provenance == AnswerProvenance::OriginalRetained)
          CHECK(inst.y_new == inst.raw.y_origin);
      }
      CHECK(apply_retention(built, ratio, 99).size() == 12);
    }
    const auto a = apply_retention(built, 0.5, 1);
    const auto b = apply_retention(built, 0.5, 1);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].answer_provenance == b[i].answer_provenance);
    CHECK(retained_count(7, 0.5) == 3);
    CHECK(retained_count(10, 0.3) == 3);
    CHECK(code_of([] { retained_count(3, 1.5); }) == Errc::InvariantViolation);
  }

  TEST_CASE("token statistics") {
    CHECK(whitespace_token_count("") == 0);
    CHECK(whitespace_token_count("one two  three\nfour\tfive six seven") == 7);
    const auto empty = token_stats({}, whitespace_token_count);
    CHECK(empty.lengths.empty());
    CHECK(empty.mean == 0.0);
    const auto h = make_histogram({3, 7, 12, 55}, 10);
    CHECK(h.bins.at(0) == 2);
    CHECK(h.bins.at(10) == 1);
    CHECK(h.bins.at(50) == 1);
    CHECK(h.mean == doctest::Approx(19.25));

    Toy toy;
    const auto built = build_pool(testing::toy_pool(), toy.config, toy.annotator, toy.retriever, "h").kept;
    const auto aug = token_stats(built, whitespace_token_count);
    const auto raw = raw_token_stats(built, whitespace_token_count);
    CHECK(aug.lengths.size() == 12);
    CHECK(aug.mean > raw.mean);
  }

  TEST_CASE("rebuild is byte-identical across worker counts") {
    Toy toy;
    auto config = toy.config;
    const auto a = build_pool(testing::toy_pool(), config, toy.annotator, toy.retriever, "h");
    config.workers = 4;
    const auto b = build_pool(testing::toy_pool(), config, toy.annotator, toy.retriever, "h");
    const auto dir = testing::scratch_dir("rebuild");
    write_build_outputs(dir / "a", a);
    write_build_outputs(dir / "b", b);
    for (const char* f : {"instances.jsonl", "passthrough.jsonl", "manifest.json"}) {
      const std::string x = testing::slurp(dir / "a" / f);
      if (std::string(f) != "passthrough.jsonl") CHECK_FALSE(x.empty());
      CHECK(x == testing::slurp(dir / "b" / f));
    }
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("pool files") {
    std::istringstream in(
        R"({"id": "1", "source": "asqa", "input": "q", "output": "a"}
{"id": "2", "source": "x", "input": "q2", "output": "a2", "category": "multi_hop", "candidates": [{"title": "t", "snippet": "s", "locator": "c1"}], "support": ["c1"]}
)");
    const auto pool = read_pool(in);
    REQUIRE(pool.size() == 2);
    CHECK(pool[1].category == Category::MultiHop);
    CHECK(pool[1].candidates.size() == 1);
    CHECK(pool[1].support_ids == std::vector<std::string>{"c1"});
    std::istringstream bad("{\"id\": \"1\"}\n");
    try {
      read_pool(bad);
      FAIL("expected ConfigError");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::ConfigError);
      CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
  }
}
