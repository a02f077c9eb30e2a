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
#include <iosfwd>
#include <memory>
#include <mutex>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace qrefine {

enum class FinishReason { StopToken, MaxTokens, EndOfSequence };

std::string_view finish_reason_name(FinishReason reason) noexcept;

struct Completion {
  std::string text;
  std::vector<std::string> tokens;
  std::vector<double> log_probs;
  FinishReason finish_reason = FinishReason::EndOfSequence;

  bool operator==(const Completion&) const = default;
};

struct DecodeParams {
  int max_tokens = 256;
  double temperature = 0.7;
  std::vector<std::string> stop_sequences;
  bool want_log_probs = true;
};

// Language model as a completion service. Implementations that cannot take
// concurrent calls report concurrent_safe() == false; callers then serialize
// through SerializedGenerator.
class Generator {
 public:
  virtual ~Generator() = default;

  virtual Completion complete(std::string_view prompt, const DecodeParams& params);
  virtual std::vector<Completion> complete_many(std::string_view prompt, const DecodeParams& params,
                                                int n) = 0;
  // Per-token log-probabilities of `target` given `prompt`.
  virtual std::vector<double> score_continuation(std::string_view prompt, std::string_view target) = 0;
  virtual bool concurrent_safe() const = 0;
};

class SerializedGenerator final : public Generator {
 public:
  explicit SerializedGenerator(Generator& inner) : inner_(inner) {}

  Completion complete(std::string_view prompt, const DecodeParams& params) override;
  std::vector<Completion> complete_many(std::string_view prompt, const DecodeParams& params,
                                        int n) override;
  std::vector<double> score_continuation(std::string_view prompt, std::string_view target) override;
  bool concurrent_safe() const override { return true; }

 private:
  Generator& inner_;
  std::mutex mutex_;
};

// Whitespace-attached tokenization used by the scripted backend: each token is
// a run of leading whitespace plus either one bracketed control marker or a run
// of ordinary characters. Concatenating the tokens reproduces the input.
std::vector<std::string> scripted_tokenize(std::string_view text);

// Truncates a completion at the earliest stop sequence (the stop text is not
// kept) and then at max_tokens, updating finish_reason.
void apply_decode_limits(Completion& completion, const DecodeParams& params);

// Deterministic replay backend. A script is an ordered list of entries, each
// pairing a prompt matcher with continuations; the first entry whose matcher
// accepts the prompt answers it. A request for n continuations takes them in
// script order and wraps around when n exceeds the entry's list. Lookup is
// stateless, so replay is identical across runs and call orders.
class ScriptedGenerator final : public Generator {
 public:
  enum class MatchKind { Any, Exact, Prefix, Suffix, Contains, Regex };

  struct Entry {
    MatchKind kind = MatchKind::Any;
    std::string pattern;
    std::vector<Completion> continuations;
  };

  explicit ScriptedGenerator(double default_log_prob = -1.0);

  // One JSON object per line:
  //   {"contains": "...", "continuations": ["text", {"text": "...", "logprobs": [...]}]}
  // Matcher keys: any (true), exact, prefix, suffix, contains, regex. Blank
  // lines and lines starting with '#' are skipped.
  static ScriptedGenerator from_jsonl(std::istream& in, double default_log_prob = -1.0);
  static ScriptedGenerator from_file(const std::filesystem::path& path, double default_log_prob = -1.0);

  void add(Entry entry);
  // Builds a continuation using scripted_tokenize and explicit or default log-probs.
  Completion make_continuation(std::string text, std::vector<double> log_probs = {}) const;

  std::size_t size() const noexcept { return entries_.size(); }
  double default_log_prob() const noexcept { return default_log_prob_; }

  std::vector<Completion> complete_many(std::string_view prompt, const DecodeParams& params,
                                        int n) override;
  std::vector<double> score_continuation(std::string_view prompt, std::string_view target) override;
  bool concurrent_safe() const override { return false; }

 private:
  struct CompiledEntry {
    Entry entry;
    std::regex regex;
  };

  const CompiledEntry* find(std::string_view prompt) const;

  double default_log_prob_;
  std::vector<CompiledEntry> entries_;
};

struct RemoteGeneratorOptions {
  std::string url;  // full completions endpoint, e.g. http://host:8000/v1/completions
  std::string api_key;
  std::string model;
  int max_in_flight = 4;
  int timeout_seconds = 60;
};

// Wire format of the remote completion endpoint.
nlohmann::json make_completion_request(std::string_view prompt, const DecodeParams& params, int n,
                                       std::string_view model = {});
std::vector<Completion> parse_completion_response(const nlohmann::json& body);

class RemoteGenerator final : public Generator {
 public:
  explicit RemoteGenerator(RemoteGeneratorOptions options);
  ~RemoteGenerator() override;

  std::vector<Completion> complete_many(std::string_view prompt, const DecodeParams& params,
                                        int n) override;
  std::vector<double> score_continuation(std::string_view prompt, std::string_view target) override;
  bool concurrent_safe() const override { return true; }

 private:
  nlohmann::json post(const nlohmann::json& request);

  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace qrefine
