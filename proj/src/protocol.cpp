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

#include "qrefine/protocol.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>

#include "qrefine/errors.hpp"
#include "qrefine/text.hpp"

namespace qrefine {

std::string_view action_name(ActionKind kind) noexcept {
  switch (kind) {
    case ActionKind::Rewrite: return "rewrite";
    case ActionKind::Decompose: return "decompose";
    case ActionKind::Disambiguate: return "disambiguate";
    case ActionKind::Answer: return "answer";
  }
  return "answer";
}

std::optional<ActionKind> action_from_name(std::string_view name) noexcept {
  if (name == "rewrite") return ActionKind::Rewrite;
  if (name == "decompose") return ActionKind::Decompose;
  if (name == "disambiguate") return ActionKind::Disambiguate;
  if (name == "answer") return ActionKind::Answer;
  return std::nullopt;
}

const std::string& TokenTable::for_action(ActionKind kind) const noexcept {
  switch (kind) {
    case ActionKind::Rewrite: return rewrite;
    case ActionKind::Decompose: return decompose;
    case ActionKind::Disambiguate: return disambiguate;
    case ActionKind::Answer: return answer;
  }
  return answer;
}

std::optional<ActionKind> TokenTable::action_for(std::string_view token) const noexcept {
  if (token == rewrite) return ActionKind::Rewrite;
  if (token == decompose) return ActionKind::Decompose;
  if (token == disambiguate) return ActionKind::Disambiguate;
  if (token == answer) return ActionKind::Answer;
  return std::nullopt;
}

std::array<std::string_view, 7> TokenTable::all() const noexcept {
  return {rewrite, decompose, disambiguate, answer, evidence_open, evidence_close, end};
}

std::string TokenTable::check() const {
  std::set<std::string_view> seen;
  for (std::string_view t : all()) {
    if (t.empty()) return "control token is empty";
    if (t.find_first_of(" \t\r\n\\") != std::string_view::npos)
      return "control token '" + std::string(t) + "' contains whitespace or a backslash";
    if (!seen.insert(t).second) return "control token '" + std::string(t) + "' is not unique";
  }
  for (std::string_view prefix : {kTitlePrefix, kSnippetPrefix, kDocumentDelimiter}) {
    for (std::string_view t : all()) {
      if (t.starts_with(text::trim(prefix)))
        return "control token '" + std::string(t) + "' collides with document markup";
    }
  }
  return {};
}

namespace {

// Length of the control token starting at s[pos], or 0.
std::size_t token_at(std::string_view s, std::size_t pos, const TokenTable& tokens) noexcept {
  std::size_t best = 0;
  for (std::string_view t : tokens.all()) {
    if (s.substr(pos, t.size()) == t) best = std::max(best, t.size());
  }
  return best;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::InvariantViolation, what);
}

void check_renderable(const Trajectory& t) {
  for (const auto& step : t.steps) {
    require(step.action != ActionKind::Answer,
            "step " + std::to_string(step.turn) + " carries the terminal answer action");
    require(!step.query.empty(), "step " + std::to_string(step.turn) + " has an empty query");
  }
}

}  // namespace

std::string escape(std::string_view payload, const TokenTable& tokens) {
  std::string out;
  out.reserve(payload.size() + 8);
  std::size_t i = 0;
  while (i < payload.size()) {
    const char c = payload[i];
    if (c == '\\') {
      out += "\\\\";
      ++i;
    } else if (c == '\n') {
      out += "\\n";
      ++i;
    } else if (c == '\r') {
      out += "\\r";
      ++i;
    } else if (std::size_t len = token_at(payload, i, tokens); len > 0) {
      out.push_back('\\');
      out.append(payload.substr(i, len));
      i += len;
    } else {
      out.push_back(c);
      ++i;
    }
  }
  return out;
}

std::string unescape(std::string_view escaped) {
  std::string out;
  out.reserve(escaped.size());
  for (std::size_t i = 0; i < escaped.size(); ++i) {
    const char c = escaped[i];
    if (c != '\\' || i + 1 == escaped.size()) {
      out.push_back(c);
      continue;
    }
    const char next = escaped[++i];
    if (next == 'n')
      out.push_back('\n');
    else if (next == 'r')
      out.push_back('\r');
    else
      out.push_back(next);
  }
  return out;
}

std::string render_evidence(const std::vector<Document>& documents, const TokenTable& tokens) {
  std::string out = tokens.evidence_open;
  out.push_back('\n');
  for (std::size_t i = 0; i < documents.size(); ++i) {
    if (i > 0) {
      out += kDocumentDelimiter;
      out.push_back('\n');
    }
    out += kTitlePrefix;
    out += escape(documents[i].title, tokens);
    out.push_back('\n');
    out += kSnippetPrefix;
    out += escape(documents[i].snippet, tokens);
    out.push_back('\n');
  }
  out += tokens.evidence_close;
  out.push_back('\n');
  return out;
}

std::string render_prefix(const Trajectory& trajectory, const TokenTable& tokens) {
  check_renderable(trajectory);
  std::string out = escape(trajectory.input, tokens);
  out.push_back('\n');
  for (const auto& step : trajectory.steps) {
    out += tokens.for_action(step.action);
    out.push_back(' ');
    out += escape(step.query, tokens);
    out.push_back('\n');
    out += render_evidence(step.documents, tokens);
  }
  return out;
}

std::string render(const Trajectory& trajectory, const TokenTable& tokens) {
  std::string out = render_prefix(trajectory, tokens);
  out += tokens.answer;
  out.push_back(' ');
  out += escape(trajectory.final_answer, tokens);
  out.push_back('\n');
  out += tokens.end;
  return out;
}

namespace {

// Splits "TOKEN payload" where TOKEN is exactly `token`. Returns nullopt when
// the line does not start with the token followed by a space or line end.
std::optional<std::string_view> after_token(std::string_view line, std::string_view token) {
  if (!line.starts_with(token)) return std::nullopt;
  std::string_view rest = line.substr(token.size());
  if (rest.empty()) return rest;
  if (rest.front() != ' ') return std::nullopt;
  return rest.substr(1);
}

bool looks_like_token(std::string_view line) {
  static const std::regex kTokenShape(R"(^\[[^\s\[\]\\]+\].*)");
  return std::regex_match(line.begin(), line.end(), kTokenShape);
}

}  // namespace

Trajectory parse(std::string_view serialized, const TokenTable& tokens) {
  const std::vector<std::string> lines = text::split_lines(serialized);
  if (lines.empty()) throw Error(Errc::MissingAnswer, "empty sequence");

  Trajectory t;
  t.input = unescape(lines[0]);
  bool answered = false;
  std::size_t i = 1;
  while (i < lines.size()) {
    const std::string_view line = lines[i];
    if (answered) {
      if (line == tokens.end && i + 1 == lines.size()) return t;
      if (line == tokens.end) throw Error(Errc::MalformedSequence, "text after the end token");
      throw Error(Errc::MalformedSequence, "expected the end token after the answer");
    }
    if (line == tokens.end) throw Error(Errc::MissingAnswer, "end token before the answer token");
    if (auto payload = after_token(line, tokens.answer)) {
      t.final_answer = unescape(*payload);
      answered = true;
      ++i;
      continue;
    }

    std::optional<ActionKind> action;
    std::string_view query;
    for (ActionKind kind : {ActionKind::Rewrite, ActionKind::Decompose, ActionKind::Disambiguate}) {
      if (auto payload = after_token(line, tokens.for_action(kind))) {
        action = kind;
        query = *payload;
        break;
      }
    }
    if (!action) {
      if (line == tokens.evidence_open || line == tokens.evidence_close)
        throw Error(Errc::MalformedSequence, "evidence block outside a search step");
      if (looks_like_token(line))
        throw Error(Errc::UnknownToken, "unrecognized control token in line '" + std::string(line) + "'");
      throw Error(Errc::MalformedSequence, "unexpected free text '" + std::string(line) + "'");
    }

    SearchStep step;
    step.turn = static_cast<int>(t.steps.size()) + 1;
    step.action = *action;
    step.query = unescape(query);
    ++i;
    if (i >= lines.size() || lines[i] != tokens.evidence_open)
      throw Error(Errc::MalformedSequence, "search step without an evidence block");
    ++i;

    bool closed = false;
    bool expect_title = true;
    Document doc;
    while (i < lines.size()) {
      const std::string_view ev = lines[i];
      if (ev == tokens.evidence_close) {
        if (!expect_title) throw Error(Errc::MalformedSequence, "document without a snippet");
        closed = true;
        ++i;
        break;
      }
      if (expect_title) {
        if (!step.documents.empty()) {
          if (ev != kDocumentDelimiter) {
            if (looks_like_token(ev)) break;
            throw Error(Errc::MalformedSequence, "missing document delimiter");
          }
          ++i;
          if (i >= lines.size()) break;
        }
        const std::string_view title_line = lines[i];
        if (!title_line.starts_with(kTitlePrefix)) {
          if (looks_like_token(title_line)) break;
          throw Error(Errc::MalformedSequence, "expected a document title");
        }
        doc = Document{};
        doc.title = unescape(title_line.substr(kTitlePrefix.size()));
        expect_title = false;
      } else {
        if (!ev.starts_with(kSnippetPrefix)) {
          if (looks_like_token(ev)) break;
          throw Error(Errc::MalformedSequence, "expected a document snippet");
        }
        doc.snippet = unescape(ev.substr(kSnippetPrefix.size()));
        doc.rank = static_cast<int>(step.documents.size()) + 1;
        step.documents.push_back(std::move(doc));
        expect_title = true;
      }
      ++i;
    }
    if (!closed) throw Error(Errc::UnterminatedEvidence, "evidence block for step " +
                                                             std::to_string(step.turn) +
                                                             " is never closed");
    t.steps.push_back(std::move(step));
  }
  throw Error(Errc::MissingAnswer, answered ? "sequence ends without the end token"
                                            : "sequence ends without an answer");
}

bool structurally_equal(const Trajectory& a, const Trajectory& b) {
  if (a.input != b.input || a.final_answer != b.final_answer) return false;
  if (a.steps.size() != b.steps.size()) return false;
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    const auto& sa = a.steps[i];
    const auto& sb = b.steps[i];
    if (sa.turn != sb.turn || sa.action != sb.action || sa.query != sb.query) return false;
    if (sa.documents.size() != sb.documents.size()) return false;
    for (std::size_t j = 0; j < sa.documents.size(); ++j) {
      const auto& da = sa.documents[j];
      const auto& db = sb.documents[j];
      if (da.title != db.title || da.snippet != db.snippet || da.rank != db.rank) return false;
    }
  }
  return true;
}

std::vector<std::string> validate(const Trajectory& t, const SearchLimits& limits) {
  std::vector<std::string> violations;
  if (t.steps.size() > limits.max_depth) {
    violations.push_back("depth: " + std::to_string(t.steps.size()) + " steps exceed max depth " +
                         std::to_string(limits.max_depth));
  }
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const auto& step = t.steps[i];
    const std::string where = "step " + std::to_string(i + 1);
    if (step.turn != static_cast<int>(i) + 1)
      violations.push_back(where + ": turn " + std::to_string(step.turn) + " is not consecutive");
    if (step.action == ActionKind::Answer)
      violations.push_back(where + ": answer action inside a search step");
    if (step.query.empty()) violations.push_back(where + ": empty refined query");
    if (step.documents.size() > limits.top_k) {
      violations.push_back(where + ": top-k: " + std::to_string(step.documents.size()) +
                           " documents exceed k=" + std::to_string(limits.top_k));
    }
    int previous_rank = 0;
    for (const auto& doc : step.documents) {
      if (doc.snippet.empty()) violations.push_back(where + ": document with empty snippet");
      if (doc.rank < 1) violations.push_back(where + ": document rank below 1");
      if (doc.rank <= previous_rank)
        violations.push_back(where + ": document ranks not strictly increasing");
      if (previous_rank == 0 && doc.rank != 1)
        violations.push_back(where + ": document ranks do not start at 1");
      previous_rank = doc.rank;
    }
  }
  if (t.answer_start > t.generated_tokens.size())
    violations.push_back("answer_start beyond the generated tokens");
  for (const auto& tok : t.generated_tokens) {
    if (!(tok.log_prob <= 0.0)) {
      violations.push_back("positive or NaN token log-probability");
      break;
    }
  }
  return violations;
}

namespace {

bool is_horizontal_space(char c) noexcept { return c == ' ' || c == '\t'; }

// Payload runs to the first raw newline or unescaped control token.
Continuation take_payload(std::string_view text, std::size_t start, ActionKind action,
                          const TokenTable& tokens) {
  while (start < text.size() && is_horizontal_space(text[start])) ++start;
  std::size_t end = start;
  while (end < text.size()) {
    const char c = text[end];
    if (c == '\n' || c == '\r') break;
    if (c == '\\') {
      const std::size_t len = token_at(text, end + 1, tokens);
      end += 1 + std::max<std::size_t>(len, 1);
      continue;
    }
    if (token_at(text, end, tokens) > 0) break;
    ++end;
  }
  end = std::min(end, text.size());
  Continuation out;
  out.action = action;
  out.payload_offset = start;
  out.payload = unescape(text::trim(text.substr(start, end - start)));
  if (text::trim(out.payload).empty())
    throw Error(Errc::ProtocolError, "continuation carries an empty payload");
  return out;
}

}  // namespace

Continuation parse_continuation(std::string_view text, const TokenTable& tokens) {
  std::size_t pos = 0;
  while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  for (ActionKind kind : {ActionKind::Rewrite, ActionKind::Decompose, ActionKind::Disambiguate,
                          ActionKind::Answer}) {
    const std::string& tok = tokens.for_action(kind);
    if (text.substr(pos, tok.size()) == tok) return take_payload(text, pos + tok.size(), kind, tokens);
  }
  const std::string_view head = text.substr(pos, 40);
  throw Error(Errc::ProtocolError, "continuation does not open with an action token: '" +
                                       std::string(head) + "'");
}

Continuation parse_forced_answer(std::string_view text, const TokenTable& tokens) {
  std::size_t pos = 0;
  while (pos < text.size() && is_horizontal_space(text[pos])) ++pos;
  if (text.substr(pos, tokens.answer.size()) == tokens.answer) pos += tokens.answer.size();
  return take_payload(text, pos, ActionKind::Answer, tokens);
}

}  // namespace qrefine
