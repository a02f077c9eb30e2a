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

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qrefine {

enum class ActionKind { Rewrite, Decompose, Disambiguate, Answer };

std::string_view action_name(ActionKind kind) noexcept;
// Accepts the lowercase names produced by action_name().
std::optional<ActionKind> action_from_name(std::string_view name) noexcept;

struct Document {
  std::string title;
  std::string snippet;
  std::string locator;  // URL or corpus document id
  int rank = 1;
  double score = 0.0;

  bool operator==(const Document&) const = default;
};

struct SearchStep {
  int turn = 1;
  ActionKind action = ActionKind::Rewrite;
  std::string query;
  std::vector<Document> documents;

  bool operator==(const SearchStep&) const = default;
};

struct GeneratedToken {
  std::string text;
  double log_prob = 0.0;

  bool operator==(const GeneratedToken&) const = default;
};

// One root-to-leaf decoding path. generated_tokens holds only text the model
// produced (refinement turns and the answer); answer_start indexes the first
// token of the final answer. evidence_log_probs is filled only when the engine
// is asked to score inserted evidence.
struct Trajectory {
  std::string input;
  std::vector<SearchStep> steps;
  std::string final_answer;
  std::vector<GeneratedToken> generated_tokens;
  std::size_t answer_start = 0;
  std::vector<double> evidence_log_probs;

  bool operator==(const Trajectory&) const = default;
};

// Surface forms of the control tokens. All seven must be distinct, non-empty,
// free of whitespace and backslashes.
struct TokenTable {
  std::string rewrite = "[S_REWRITE]";
  std::string decompose = "[S_DECOMPOSE]";
  std::string disambiguate = "[S_DISAMBIGUATE]";
  std::string answer = "[A_RESPONSE]";
  std::string evidence_open = "[R_EVIDENCE]";
  std::string evidence_close = "[/R_EVIDENCE]";
  std::string end = "[EOS]";

  const std::string& for_action(ActionKind kind) const noexcept;
  std::optional<ActionKind> action_for(std::string_view token) const noexcept;
  std::array<std::string_view, 7> all() const noexcept;
  // Empty when the table is usable, otherwise a description of the problem.
  std::string check() const;

  bool operator==(const TokenTable&) const = default;
};

inline constexpr std::string_view kDocumentDelimiter = "---";
inline constexpr std::string_view kTitlePrefix = "Title: ";
inline constexpr std::string_view kSnippetPrefix = "Snippet: ";

// Payload escaping: backslash, CR and LF become two-character escapes, and
// every control-token spelling is prefixed with a backslash.
std::string escape(std::string_view payload, const TokenTable& tokens = {});
std::string unescape(std::string_view escaped);

std::string render_evidence(const std::vector<Document>& documents, const TokenTable& tokens = {});

// Input plus every completed search step: the prompt the generator continues.
std::string render_prefix(const Trajectory& trajectory, const TokenTable& tokens = {});
std::string render(const Trajectory& trajectory, const TokenTable& tokens = {});
Trajectory parse(std::string_view serialized, const TokenTable& tokens = {});

// Equality over everything the serialized form carries: input, step turns,
// actions and queries, document titles, snippets and ranks, final answer.
bool structurally_equal(const Trajectory& a, const Trajectory& b);

struct SearchLimits {
  std::size_t max_depth = 2;
  std::size_t top_k = 3;
};

std::vector<std::string> validate(const Trajectory& trajectory, const SearchLimits& limits);

// A single generator continuation: a refinement action with its query, or the
// answer token with the answer text. payload_offset is the byte offset of the
// payload within the continuation text.
struct Continuation {
  ActionKind action = ActionKind::Answer;
  std::string payload;
  std::size_t payload_offset = 0;
};

// Throws Error{ProtocolError} when the continuation does not open with a
// control token or carries an empty payload.
Continuation parse_continuation(std::string_view text, const TokenTable& tokens = {});

// Parses the continuation of a prompt that already ends in the answer token.
Continuation parse_forced_answer(std::string_view text, const TokenTable& tokens = {});

}  // namespace qrefine
