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
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qrefine/engine.hpp"
#include "qrefine/selection.hpp"

namespace qrefine {

enum class MetricKind { Accuracy, Match, F1 };

std::string_view metric_name(MetricKind kind) noexcept;
std::optional<MetricKind> metric_from_name(std::string_view name) noexcept;

struct BenchmarkItem {
  std::string id;
  std::string question;
  std::vector<std::string> choices;  // empty unless multiple-choice
  std::vector<std::string> gold;
  std::vector<Document> candidates;  // reading-comprehension pool
};

// Choice index named by a label such as "B", "(b)", "C." or "Answer: D".
std::optional<std::size_t> choice_label(std::string_view pred, std::size_t n_choices);

// 1 iff pred names gold_choice by label or by normalized choice text.
// Throws Error{GoldNotInChoices}.
int accuracy(std::string_view pred, std::span<const std::string> choices, std::string_view gold_choice);

// 1 iff some non-empty normalized gold is a substring of the normalized pred.
int match_score(std::string_view pred, std::span<const std::string> golds);

// Lowercased, punctuation-stripped whitespace tokens. Articles are kept.
std::vector<std::string> f1_tokens(std::string_view s);
double f1(std::string_view pred, std::string_view gold);
double f1_max(std::string_view pred, std::span<const std::string> golds);

// Item score in [0, 1] under the metric. Accuracy scores against gold[0].
double item_score(MetricKind kind, std::string_view pred, const BenchmarkItem& item);

struct ItemResult {
  std::string id;
  std::string chosen;  // answer of the configured strategy
  std::map<std::string, std::string> answers;  // strategy name -> answer
  std::map<std::string, double> scores;        // strategy name -> item score
  double upper_bound = 0.0;
  std::size_t trajectories = 0;
  std::string error;  // non-empty when the item failed
};

struct Report {
  MetricKind metric = MetricKind::Accuracy;
  Strategy strategy = Strategy::Ensemble;
  std::vector<ItemResult> per_item;
  std::map<std::string, double> strategy_scores;  // 0..100
  double upper_bound_score = 0.0;                 // 0..100
  std::string config_hash;
};

using RetrieverFactory = std::function<std::unique_ptr<Retriever>(const BenchmarkItem&)>;

struct BenchmarkOptions {
  MetricKind metric = MetricKind::Accuracy;
  SelectionOptions selection;
  int workers = 1;  // items evaluated concurrently
};

// One search per item; every strategy and the upper bound select from the same
// trajectory set. Failed items score 0.
Report run_benchmark(std::span<const BenchmarkItem> items, const SearchConfig& config, Generator& generator,
                     const RetrieverFactory& retrievers, const BenchmarkOptions& options,
                     std::string_view config_hash);

nlohmann::json report_json(const Report& report);
std::string report_table(const Report& report);

// Scores of several runs side by side, one column per strategy.
std::string strategy_table(const std::vector<std::pair<std::string, Report>>& runs);

struct ResilienceRow {
  std::string source;
  std::vector<double> scores;
  double mean = 0.0;
};

struct Resilience {
  std::vector<ResilienceRow> rows;
  double avg = 0.0;
  double var = 0.0;  // sample standard deviation of the per-source means
  std::string table;
};

// Throws Error{RaggedRows} for unequal row lengths and Error{EmptyInput} for
// fewer than two sources or empty rows.
Resilience source_resilience(const std::vector<std::pair<std::string, std::vector<double>>>& rows,
                             const std::vector<std::string>& task_names = {});
nlohmann::json resilience_json(const Resilience& r);

std::string format_fixed(double value, int decimals = 1);

// Benchmark file: line-delimited {id, question, choices?, gold, candidates?}.
std::vector<BenchmarkItem> read_benchmark(std::istream& in);
std::vector<BenchmarkItem> read_benchmark_file(const std::filesystem::path& path);

// Keeps the items whose id appears in `ids`, in item order.
std::vector<BenchmarkItem> filter_by_ids(std::span<const BenchmarkItem> items, std::span<const std::string> ids);

struct TaskPreset {
  std::string name;
  MetricKind metric;
  std::size_t size;  // instances in the evaluation split
  int depth;         // exploration depth
};

// Evaluation presets: arc_c, popqa, obqa, hotpotqa, 2wiki, musique.
const std::vector<TaskPreset>& task_presets();
const TaskPreset* find_preset(std::string_view name);

}  // namespace qrefine
