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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qrefine/generator.hpp"
#include "qrefine/protocol.hpp"
#include "qrefine/retrieval.hpp"

namespace qrefine {

enum class Category { MultiTurn, MultiHop, Ambiguous };
enum class AnswerProvenance { Regenerated, OriginalRetained };

std::string_view category_name(Category c) noexcept;
std::optional<Category> category_from_name(std::string_view name) noexcept;
std::string_view provenance_name(AnswerProvenance p) noexcept;

struct RawInstance {
  std::string id;
  std::string source;  // source dataset tag, e.g. "hotpotqa"
  std::string x_origin;
  std::string y_origin;
  std::optional<Category> category;
  std::vector<Document> candidates;      // gold candidate pool (multi-hop sets)
  std::vector<std::string> support_ids;  // candidate locators that must be retrieved
};

struct AugmentedInstance {
  RawInstance raw;
  Category category = Category::MultiTurn;
  bool retrieval_needed = true;
  std::vector<SearchStep> steps;
  std::string y_new;
  AnswerProvenance answer_provenance = AnswerProvenance::Regenerated;
  std::optional<std::string> dropped_reason;  // error name, e.g. "AnnotatorRefusal"
  std::string dropped_detail;
};

// Source dataset -> category. Source names compare case-insensitively with '-'
// and '_' treated alike. Pass-through sources are copied verbatim, never
// annotated.
struct SourceMap {
  std::map<std::string, Category> categories;
  std::set<std::string> passthrough;

  static SourceMap defaults();
  static std::string key(std::string_view source);
  bool is_passthrough(std::string_view source) const;
};

Category classify(const RawInstance& raw, const SourceMap& sources);

// Annotation prompt templates. Placeholders are written {Like This}.
struct Templates {
  std::string multi_turn;
  std::string decompose;
  std::string disambiguate;
  std::string regenerate;
  // Exemplars substituted for {In context examples}; these are repository
  // authored, one per template.
  std::string multi_turn_examples;
  std::string decompose_examples;
  std::string disambiguate_examples;

  static Templates defaults();
};

std::string fill_template(std::string_view tmpl, const std::vector<std::pair<std::string, std::string>>& values);

// Splits a "User: ... / Assistant: ..." transcript into (history, current query).
// Input without role markers is a single query with empty history.
std::pair<std::string, std::string> split_conversation(std::string_view x_origin);

struct BuildConfig {
  SourceMap sources = SourceMap::defaults();
  Templates templates = Templates::defaults();
  int top_k = 3;
  int max_turns_multi_hop = 3;
  int max_turns_other = 1;
  int max_tokens = 512;
  int workers = 1;
  TokenTable tokens;
};

struct Refinements {
  bool retrieval_needed = true;
  std::vector<std::pair<ActionKind, std::string>> queries;
};

std::string annotation_prompt(const RawInstance& raw, Category category, const BuildConfig& config);

// Throws Error{AnnotatorRefusal} or Error{FormatViolation}.
Refinements parse_refinement_reply(Category category, std::string_view reply, int max_turns,
                                   std::string_view current_query);

Refinements annotate_refinements(const RawInstance& raw, Category category, Generator& annotator,
                                 const BuildConfig& config);

std::string regeneration_prompt(const RawInstance& raw, const std::vector<SearchStep>& steps,
                                const BuildConfig& config);
std::string regenerate_answer(const RawInstance& raw, const std::vector<SearchStep>& steps, Generator& annotator,
                              const BuildConfig& config);

// Per-instance failures are recorded in dropped_reason; never throws for them.
AugmentedInstance build(const RawInstance& raw, const BuildConfig& config, Generator& annotator,
                        Retriever& retriever);

Trajectory to_trajectory(const AugmentedInstance& instance);

struct BuildResult {
  std::vector<AugmentedInstance> kept;
  std::vector<AugmentedInstance> dropped;
  std::vector<RawInstance> passthrough;
  nlohmann::json manifest;
};

BuildResult build_pool(const std::vector<RawInstance>& pool, const BuildConfig& config, Generator& annotator,
                       Retriever& retriever, std::string_view config_hash);

// Exactly floor(ratio * N) instances, drawn by seeded sampling without
// replacement, get y_new = y_origin and OriginalRetained.
std::vector<AugmentedInstance> apply_retention(std::vector<AugmentedInstance> instances, double ratio,
                                               std::uint64_t seed);
std::size_t retained_count(std::size_t n, double ratio);

using TokenCounter = std::function<std::size_t(std::string_view)>;
std::size_t whitespace_token_count(std::string_view s);

struct Histogram {
  std::size_t bin_width = 1;
  std::map<std::size_t, std::size_t> bins;  // bin start -> count
  std::vector<std::size_t> lengths;
  double mean = 0.0;
};

Histogram make_histogram(std::vector<std::size_t> lengths, std::size_t bin_width);
// Lengths of the rendered augmented instances.
Histogram token_stats(std::span<const AugmentedInstance> instances, const TokenCounter& counter,
                      std::size_t bin_width = 50);
// Lengths of the same instances before augmentation (input plus original answer).
Histogram raw_token_stats(std::span<const AugmentedInstance> instances, const TokenCounter& counter,
                          std::size_t bin_width = 50);

// Input pool: line-delimited {id, source, input, output, category?, candidates?, support?}.
std::vector<RawInstance> read_pool(std::istream& in);
std::vector<RawInstance> read_pool_file(const std::filesystem::path& path);

nlohmann::json document_record(const Document& d);
Document document_from_record(const nlohmann::json& j, int rank);
nlohmann::json raw_record(const RawInstance& raw);
nlohmann::json instance_record(const AugmentedInstance& instance);
AugmentedInstance instance_from_record(const nlohmann::json& j);

// Writes instances.jsonl, passthrough.jsonl and manifest.json into dir.
void write_build_outputs(const std::filesystem::path& dir, const BuildResult& result);

}  // namespace qrefine
