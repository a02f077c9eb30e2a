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

#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "qrefine/dataset.hpp"
#include "qrefine/generator.hpp"
#include "qrefine/retrieval.hpp"
#include "qrefine/text.hpp"

#ifndef QREFINE_TEST_FIXTURES
#error "QREFINE_TEST_FIXTURES must point at tests/fixtures"
#endif

namespace testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(QREFINE_TEST_FIXTURES) / name;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline nlohmann::json load_json(const std::string& name) { return nlohmann::json::parse(slurp(fixture(name))); }

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("qrefine-" + tag + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Text between `label` and the next blank line.
inline std::string section_after(const std::string& prompt, const std::string& label) {
  auto pos = prompt.rfind(label);
  if (pos == std::string::npos) return {};
  pos += label.size();
  while (pos < prompt.size() && prompt[pos] == '\n') ++pos;
  auto end = prompt.find("\n\n", pos);
  return prompt.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
}

// Deterministic stand-in for the annotation service. Replies are computed from
// the prompt alone, so the stub is safe to share between threads.
class StubAnnotator final : public qrefine::Generator {
 public:
  std::vector<qrefine::Completion> complete_many(std::string_view prompt_view, const qrefine::DecodeParams&,
                                                 int n) override {
    const std::string prompt(prompt_view);
    std::string reply = respond(prompt);
    qrefine::Completion c;
    c.text = reply;
    c.tokens = qrefine::scripted_tokenize(reply);
    c.log_probs.assign(c.tokens.size(), -1.0);
    c.finish_reason = qrefine::FinishReason::EndOfSequence;
    return std::vector<qrefine::Completion>(static_cast<std::size_t>(n), c);
  }
  std::vector<double> score_continuation(std::string_view, std::string_view target) override {
    return std::vector<double>(qrefine::scripted_tokenize(target).size(), -1.0);
  }
  bool concurrent_safe() const override { return true; }

  static std::string respond(const std::string& prompt) {
    if (prompt.find("REFUSE") != std::string::npos) return "I'm sorry, but I can't help with that request.";
    if (prompt.find("PREAMBLE") != std::string::npos) return "Here are the decomposed queries:\nfirst\nsecond";
    if (ends_with(prompt, "Answer:\n")) {
      const std::string contexts = section_after(prompt, "Contexts:");
      auto nl = contexts.find('\n');
      if (contexts.empty() || nl == std::string::npos) return "No context was needed for this reply.";
      return contexts.substr(nl + 1);  // snippet of the first document
    }
    if (ends_with(prompt, "Decomposed queries:\n")) {
      const std::string q = section_after(prompt, "Multihop Question:");
      return "What is the first part of: " + q + "\nWhat is the second part of: " + q;
    }
    if (ends_with(prompt, "Disambiguated Query:\n")) {
      return "Which specific reading is meant by: " + section_after(prompt, "Original Question:");
    }
    if (ends_with(prompt, "Response For Retrieval Necessity:\n")) {
      const std::string q = section_after(prompt, "Current User's Query:");
      const std::string lower = qrefine::text::to_lower(q);
      if (lower.find("thank") != std::string::npos || lower.find("hello") != std::string::npos) return "no";
      return "yes\n" + q + " explained";
    }
    return "unrecognised prompt";
  }

 private:
  static bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  }
};

inline std::vector<qrefine::CorpusRecord> toy_corpus() {
  return {
      {"d01", "Photosynthesis", "Plants convert sunlight water and carbon dioxide into sugar and oxygen."},
      {"d02", "Moon", "The Moon orbits the Earth roughly every twenty seven days."},
      {"d03", "Magnets", "Magnets attract iron and have a north and a south pole."},
      {"d04", "Water cycle", "Water evaporates condenses into clouds and falls as rain."},
      {"d05", "Nobel Prize", "The Nobel Prize in Physics has been awarded since 1901."},
      {"d06", "World Series", "The World Series is the annual championship of Major League Baseball."},
      {"d07", "Mercury", "Mercury is the smallest planet and closest to the Sun."},
      {"d08", "Giants", "The San Francisco Giants won the World Series in 2010 2012 and 2014."},
      {"d09", "Jaguar", "Jaguar may refer to a big cat or a British car maker."},
      {"d10", "Python", "Python may refer to a snake or a programming language."},
  };
}

// Twelve instances, four per category, all annotatable by StubAnnotator.
inline std::vector<qrefine::RawInstance> toy_pool() {
  using qrefine::Document;
  std::vector<qrefine::RawInstance> pool;
  const char* hops[4][3] = {
      {"Who directed the film whose lead actor was born in Ohio?", "Film A", "Director B"},
      {"Which river flows through the capital of the country with the Eiffel Tower?", "Eiffel Tower", "Seine"},
      {"What language is spoken in the birthplace of the inventor of the telephone?", "Bell", "Edinburgh"},
      {"In what year was the university attended by the first astronaut on the Moon founded?", "Armstrong",
       "Purdue"},
  };
  for (int i = 0; i < 4; ++i) {
    qrefine::RawInstance r;
    r.id = "mh-" + std::to_string(i + 1);
    r.source = i % 2 ? "musique" : "hotpotqa";
    r.x_origin = hops[i][0];
    r.y_origin = std::string(hops[i][2]) + " answer";
    r.candidates = {
        Document{hops[i][1], std::string(hops[i][1]) + " is the first hop entity of this question.", "s1-" + r.id},
        Document{hops[i][2], std::string(hops[i][2]) + " is the second hop entity and holds the answer.",
                 "s2-" + r.id},
        Document{"Distractor", "An unrelated passage about something else entirely.", "x-" + r.id},
    };
    r.support_ids = {"s1-" + r.id, "s2-" + r.id};
    pool.push_back(r);
  }
  const char* amb[4] = {"When did the Giants win the World Series?", "How fast is a jaguar?",
                        "Who created Python?", "When was the Nobel prize first awarded?"};
  for (int i = 0; i < 4; ++i) {
    qrefine::RawInstance r;
    r.id = "amb-" + std::to_string(i + 1);
    r.source = "asqa";
    r.x_origin = amb[i];
    r.y_origin = "It depends.";
    pool.push_back(r);
  }
  const char* turns[4][2] = {
      {"User: Why is the sky dark at night?\nAssistant: Because the Sun is below the horizon.\nUser: How long does the Moon take to orbit the Earth?",
       "About 27 days."},
      {"User: Hello!", "Hi, how can I help?"},
      {"Which planet is closest to the Sun?", "Mercury"},
      {"What do magnets attract?", "Iron"},
  };
  const char* sources[4] = {"arc_easy", "arc_challenge", "openbookqa", "arc_easy"};
  for (int i = 0; i < 4; ++i) {
    qrefine::RawInstance r;
    r.id = "mt-" + std::to_string(i + 1);
    r.source = sources[i];
    r.x_origin = turns[i][0];
    r.y_origin = turns[i][1];
    pool.push_back(r);
  }
  return pool;
}

}  // namespace testing
