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

#include "qrefine/generator.hpp"

#include <cctype>
#include <fstream>
#include <istream>

#include "qrefine/errors.hpp"
#include "qrefine/text.hpp"

namespace qrefine {

std::string_view finish_reason_name(FinishReason reason) noexcept {
  switch (reason) {
    case FinishReason::StopToken: return "stop";
    case FinishReason::MaxTokens: return "length";
    case FinishReason::EndOfSequence: return "eos";
  }
  return "eos";
}

Completion Generator::complete(std::string_view prompt, const DecodeParams& params) {
  auto all = complete_many(prompt, params, 1);
  if (all.size() != 1) throw Error(Errc::MalformedResponse, "expected exactly one completion");
  return std::move(all.front());
}

Completion SerializedGenerator::complete(std::string_view prompt, const DecodeParams& params) {
  std::lock_guard lock(mutex_);
  return inner_.complete(prompt, params);
}

std::vector<Completion> SerializedGenerator::complete_many(std::string_view prompt,
                                                           const DecodeParams& params, int n) {
  std::lock_guard lock(mutex_);
  return inner_.complete_many(prompt, params, n);
}

std::vector<double> SerializedGenerator::score_continuation(std::string_view prompt,
                                                            std::string_view target) {
  std::lock_guard lock(mutex_);
  return inner_.score_continuation(prompt, target);
}

std::vector<std::string> scripted_tokenize(std::string_view text) {
  auto is_space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t start = i;
    while (i < text.size() && is_space(text[i])) ++i;
    if (i < text.size() && text[i] == '[') {
      std::size_t close = i + 1;
      while (close < text.size() && text[close] != ']' && text[close] != '[' && !is_space(text[close]))
        ++close;
      if (close < text.size() && text[close] == ']') {
        i = close + 1;
        tokens.emplace_back(text.substr(start, i - start));
        continue;
      }
      ++i;
    }
    while (i < text.size() && !is_space(text[i]) && text[i] != '[') ++i;
    tokens.emplace_back(text.substr(start, i - start));
  }
  return tokens;
}

void apply_decode_limits(Completion& c, const DecodeParams& params) {
  std::size_t cut = std::string::npos;
  for (const auto& stop : params.stop_sequences) {
    if (stop.empty()) continue;
    cut = std::min(cut, c.text.find(stop));
  }
  if (cut != std::string::npos) {
    std::vector<std::string> tokens;
    std::vector<double> log_probs;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < c.tokens.size() && offset < cut; ++i) {
      const std::size_t end = offset + c.tokens[i].size();
      tokens.push_back(end <= cut ? c.tokens[i] : c.tokens[i].substr(0, cut - offset));
      if (i < c.log_probs.size()) log_probs.push_back(c.log_probs[i]);
      offset = end;
    }
    c.text.resize(cut);
    c.tokens = std::move(tokens);
    c.log_probs = std::move(log_probs);
    c.finish_reason = FinishReason::StopToken;
  }
  if (params.max_tokens >= 0 && c.tokens.size() > static_cast<std::size_t>(params.max_tokens)) {
    c.tokens.resize(static_cast<std::size_t>(params.max_tokens));
    if (c.log_probs.size() > c.tokens.size()) c.log_probs.resize(c.tokens.size());
    c.text.clear();
    for (const auto& t : c.tokens) c.text += t;
    c.finish_reason = FinishReason::MaxTokens;
  }
}

ScriptedGenerator::ScriptedGenerator(double default_log_prob) : default_log_prob_(default_log_prob) {
  if (!(default_log_prob <= 0.0))
    throw Error(Errc::ConfigError, "scripted default log-prob must be <= 0");
}

Completion ScriptedGenerator::make_continuation(std::string text, std::vector<double> log_probs) const {
  Completion c;
  c.tokens = scripted_tokenize(text);
  c.text = std::move(text);
  if (log_probs.empty()) log_probs.assign(c.tokens.size(), default_log_prob_);
  if (log_probs.size() != c.tokens.size()) {
    throw Error(Errc::ConfigError, "continuation '" + c.text + "' has " + std::to_string(c.tokens.size()) +
                                       " tokens but " + std::to_string(log_probs.size()) + " log-probs");
  }
  c.log_probs = std::move(log_probs);
  c.finish_reason = FinishReason::EndOfSequence;
  return c;
}

void ScriptedGenerator::add(Entry entry) {
  for (const auto& c : entry.continuations) {
    if (c.tokens.size() != c.log_probs.size())
      throw Error(Errc::ConfigError, "continuation tokens and log-probs differ in length");
    for (double lp : c.log_probs) {
      if (!(lp <= 0.0)) throw Error(Errc::ConfigError, "scripted log-prob must be <= 0");
    }
  }
  CompiledEntry compiled{std::move(entry), {}};
  if (compiled.entry.kind == MatchKind::Regex) {
    try {
      compiled.regex = std::regex(compiled.entry.pattern, std::regex::ECMAScript);
    } catch (const std::regex_error& e) {
      throw Error(Errc::ConfigError, "bad script regex '" + compiled.entry.pattern + "': " + e.what());
    }
  }
  entries_.push_back(std::move(compiled));
}

const ScriptedGenerator::CompiledEntry* ScriptedGenerator::find(std::string_view prompt) const {
  for (const auto& e : entries_) {
    const std::string& p = e.entry.pattern;
    bool hit = false;
    switch (e.entry.kind) {
      case MatchKind::Any: hit = true; break;
      case MatchKind::Exact: hit = prompt == p; break;
      case MatchKind::Prefix: hit = prompt.starts_with(p); break;
      case MatchKind::Suffix: hit = prompt.ends_with(p); break;
      case MatchKind::Contains: hit = prompt.find(p) != std::string_view::npos; break;
      case MatchKind::Regex: hit = std::regex_search(prompt.begin(), prompt.end(), e.regex); break;
    }
    if (hit) return &e;
  }
  return nullptr;
}

std::vector<Completion> ScriptedGenerator::complete_many(std::string_view prompt,
                                                         const DecodeParams& params, int n) {
  if (prompt.empty()) throw Error(Errc::InvariantViolation, "empty prompt");
  if (n < 1) throw Error(Errc::InvariantViolation, "n must be >= 1");
  const CompiledEntry* entry = find(prompt);
  if (entry == nullptr || entry->entry.continuations.empty()) {
    std::string tail(prompt.substr(prompt.size() > 80 ? prompt.size() - 80 : 0));
    throw Error(Errc::ScriptExhausted, "no script entry matches prompt ending '" + tail + "'");
  }
  const auto& pool = entry->entry.continuations;
  std::vector<Completion> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Completion c = pool[static_cast<std::size_t>(i) % pool.size()];
    apply_decode_limits(c, params);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<double> ScriptedGenerator::score_continuation(std::string_view prompt, std::string_view target) {
  (void)prompt;
  if (target.empty()) throw Error(Errc::InvariantViolation, "empty scoring target");
  return std::vector<double>(scripted_tokenize(target).size(), default_log_prob_);
}

namespace {

FinishReason finish_from_name(std::string_view name) {
  if (name == "stop") return FinishReason::StopToken;
  if (name == "length") return FinishReason::MaxTokens;
  return FinishReason::EndOfSequence;
}

Completion continuation_from_json(const ScriptedGenerator& gen, const nlohmann::json& j) {
  if (j.is_string()) return gen.make_continuation(j.get<std::string>());
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
    throw Error(Errc::ConfigError, "continuation must be a string or an object with \"text\"");
  std::string text = j["text"].get<std::string>();
  std::vector<double> log_probs;
  if (j.contains("logprobs")) log_probs = j["logprobs"].get<std::vector<double>>();
  Completion c;
  if (j.contains("tokens")) {
    c.text = text;
    c.tokens = j["tokens"].get<std::vector<std::string>>();
    std::string joined;
    for (const auto& t : c.tokens) joined += t;
    if (joined != c.text) throw Error(Errc::ConfigError, "continuation tokens do not concatenate to text");
    if (log_probs.empty()) log_probs.assign(c.tokens.size(), gen.default_log_prob());
    if (log_probs.size() != c.tokens.size())
      throw Error(Errc::ConfigError, "continuation tokens and log-probs differ in length");
    c.log_probs = std::move(log_probs);
  } else {
    c = gen.make_continuation(std::move(text), std::move(log_probs));
  }
  if (j.contains("finish_reason")) c.finish_reason = finish_from_name(j["finish_reason"].get<std::string>());
  return c;
}

}  // namespace

ScriptedGenerator ScriptedGenerator::from_jsonl(std::istream& in, double default_log_prob) {
  ScriptedGenerator gen(default_log_prob);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view trimmed = text::trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    try {
      const auto j = nlohmann::json::parse(trimmed);
      Entry entry;
      int matchers = 0;
      static const std::pair<const char*, MatchKind> kMatchers[] = {
          {"any", MatchKind::Any},           {"exact", MatchKind::Exact},
          {"prefix", MatchKind::Prefix},     {"suffix", MatchKind::Suffix},
          {"contains", MatchKind::Contains}, {"regex", MatchKind::Regex}};
      for (const auto& [key, kind] : kMatchers) {
        if (!j.contains(key)) continue;
        ++matchers;
        entry.kind = kind;
        if (kind != MatchKind::Any) entry.pattern = j[key].get<std::string>();
      }
      if (matchers != 1) throw Error(Errc::ConfigError, "exactly one matcher key required");
      if (!j.contains("continuations") || !j["continuations"].is_array() || j["continuations"].empty())
        throw Error(Errc::ConfigError, "non-empty \"continuations\" array required");
      for (const auto& c : j["continuations"]) entry.continuations.push_back(continuation_from_json(gen, c));
      gen.add(std::move(entry));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ConfigError, "script line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(Errc::ConfigError, "script line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return gen;
}

ScriptedGenerator ScriptedGenerator::from_file(const std::filesystem::path& path, double default_log_prob) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open script " + path.string());
  return from_jsonl(in, default_log_prob);
}

}  // namespace qrefine
