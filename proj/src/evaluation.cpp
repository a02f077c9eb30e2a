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

#include "qrefine/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

#include "qrefine/errors.hpp"
#include "qrefine/parallel.hpp"
#include "qrefine/text.hpp"

namespace qrefine {

std::string_view metric_name(MetricKind kind) noexcept {
  switch (kind) {
    case MetricKind::Accuracy: return "accuracy";
    case MetricKind::Match: return "match";
    case MetricKind::F1: return "f1";
  }
  return "accuracy";
}

std::optional<MetricKind> metric_from_name(std::string_view name) noexcept {
  if (name == "accuracy") return MetricKind::Accuracy;
  if (name == "match") return MetricKind::Match;
  if (name == "f1") return MetricKind::F1;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Metrics

std::optional<std::size_t> choice_label(std::string_view pred, std::size_t n_choices) {
  static const std::regex kPrefix(R"(^\s*(?:the\s+)?(?:correct\s+)?answer\s*(?:is|:)\s*)", std::regex::icase);
  // A bare letter, or a letter wrapped in parentheses or followed by ) . : and
  // optional trailing text.
  static const std::regex kLabel(R"(^\(([A-Za-z])\)(?:\s.*)?$|^([A-Za-z])(?:[).:](?:\s.*)?)?$)");
  std::string s(text::trim(pred));
  s = std::regex_replace(s, kPrefix, "", std::regex_constants::format_first_only);
  s = std::string(text::trim(s));
  std::smatch m;
  if (!std::regex_match(s, m, kLabel)) return std::nullopt;
  const std::string letter = m[1].matched ? m[1].str() : m[2].str();
  const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(letter[0])));
  const std::size_t idx = static_cast<std::size_t>(c - 'A');
  if (idx >= n_choices) return std::nullopt;
  return idx;
}

int accuracy(std::string_view pred, std::span<const std::string> choices, std::string_view gold_choice) {
  auto gold_it = std::find(choices.begin(), choices.end(), gold_choice);
  if (gold_it == choices.end()) {
    const std::string g = text::normalize_answer(gold_choice);
    gold_it = std::find_if(choices.begin(), choices.end(),
                           [&](const std::string& c) { return text::normalize_answer(c) == g; });
  }
  if (gold_it == choices.end())
    throw Error(Errc::GoldNotInChoices, "gold '" + std::string(gold_choice) + "' is not among the choices");
  const std::size_t gold_idx = static_cast<std::size_t>(gold_it - choices.begin());

  if (auto label = choice_label(pred, choices.size())) return *label == gold_idx ? 1 : 0;
  const std::string p = text::normalize_answer(pred);
  if (p.empty()) return 0;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (text::normalize_answer(choices[i]) == p) return i == gold_idx ? 1 : 0;
  }
  return 0;
}

int match_score(std::string_view pred, std::span<const std::string> golds) {
  const std::string p = text::normalize_answer(pred);
  for (const auto& g : golds) {
    const std::string n = text::normalize_answer(g);
    if (!n.empty() && p.find(n) != std::string::npos) return 1;
  }
  return 0;
}

std::vector<std::string> f1_tokens(std::string_view s) {
  std::string cleaned;
  cleaned.reserve(s.size());
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u)) continue;
    cleaned += static_cast<char>(u < 0x80 ? std::tolower(u) : u);
  }
  return text::split_whitespace(cleaned);
}

double f1(std::string_view pred, std::string_view gold) {
  auto p = f1_tokens(pred);
  auto g = f1_tokens(gold);
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : g) ++counts[t];
  std::size_t common = 0;
  for (const auto& t : p) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

double f1_max(std::string_view pred, std::span<const std::string> golds) {
  double best = 0.0;
  for (const auto& g : golds) best = std::max(best, f1(pred, g));
  return best;
}

double item_score(MetricKind kind, std::string_view pred, const BenchmarkItem& item) {
  if (item.gold.empty()) throw Error(Errc::EmptyInput, "item " + item.id + " has no gold answer");
  switch (kind) {
    case MetricKind::Accuracy: return accuracy(pred, item.choices, item.gold.front());
    case MetricKind::Match: return match_score(pred, item.gold);
    case MetricKind::F1: return f1_max(pred, item.gold);
  }
  return 0.0;
}

// ---------------------------------------------------------------------------
// Benchmark

namespace {

std::string engine_input(const BenchmarkItem& item) {
  std::string input = item.question;
  for (std::size_t i = 0; i < item.choices.size(); ++i) {
    input += '\n';
    input += static_cast<char>('A' + i);
    input += ". " + item.choices[i];
  }
  return input;
}

ItemResult evaluate_item(const BenchmarkItem& item, const SearchConfig& config, Generator& generator,
                         const RetrieverFactory& retrievers, const BenchmarkOptions& options) {
  ItemResult r;
  r.id = item.id;
  for (Strategy s : {Strategy::Ppl, Strategy::Confidence, Strategy::Ensemble}) r.scores[std::string(strategy_name(s))] = 0.0;
  try {
    if (item.gold.empty()) throw Error(Errc::EmptyInput, "item has no gold answer");
    auto retriever = retrievers(item);
    if (!retriever) throw Error(Errc::RetrievalError, "no retriever for item");
    const auto trajectories = run(engine_input(item), config, generator, *retriever);
    const auto scored = score_all(trajectories, options.selection);
    if (scored.empty()) throw Error(Errc::NoScoredTokens, "no scorable trajectory");
    r.trajectories = scored.size();

    r.answers["ppl"] = select_ppl(scored).trajectory.final_answer;
    r.answers["confidence"] = select_confidence(scored).trajectory.final_answer;
    r.answers["ensemble"] =
        select_ensemble_detail(scored, options.selection.ensemble_domain, options.selection.group_key)
            .representative;
    for (const auto& [name, answer] : r.answers) r.scores[name] = item_score(options.metric, answer, item);
    r.chosen = r.answers[std::string(strategy_name(config.strategy))];

    if (options.metric == MetricKind::F1) {
      for (const auto& s : scored) r.upper_bound = std::max(r.upper_bound, item_score(options.metric, s.trajectory.final_answer, item));
    } else {
      const MetricKind kind = options.metric;
      r.upper_bound = upper_bound(scored, item.gold, [&](std::string_view pred, std::span<const std::string>) {
                        return item_score(kind, pred, item) >= 1.0;
                      })
                          ? 1.0
                          : 0.0;
    }
  } catch (const std::exception& e) {
    r.error = e.what();
    for (auto& [name, score] : r.scores) score = 0.0;
    r.upper_bound = 0.0;
  }
  return r;
}

}  // namespace

Report run_benchmark(std::span<const BenchmarkItem> items, const SearchConfig& config, Generator& generator,
                     const RetrieverFactory& retrievers, const BenchmarkOptions& options,
                     std::string_view config_hash) {
  if (items.empty()) throw Error(Errc::EmptyInput, "benchmark has no items");
  check_config(config);

  std::optional<SerializedGenerator> serialized;
  Generator* gen = &generator;
  if (options.workers > 1 && !generator.concurrent_safe()) gen = &serialized.emplace(generator);

  Report report;
  report.metric = options.metric;
  report.strategy = config.strategy;
  report.config_hash = std::string(config_hash);
  report.per_item.resize(items.size());
  run_parallel(items.size(), options.workers, [&](std::size_t i) {
    report.per_item[i] = evaluate_item(items[i], config, *gen, retrievers, options);
  });

  const double n = static_cast<double>(items.size());
  for (Strategy s : {Strategy::Ppl, Strategy::Confidence, Strategy::Ensemble}) {
    const std::string name(strategy_name(s));
    double sum = 0.0;
    for (const auto& r : report.per_item) sum += r.scores.at(name);
    report.strategy_scores[name] = 100.0 * sum / n;
  }
  double ub = 0.0;
  for (const auto& r : report.per_item) ub += r.upper_bound;
  report.upper_bound_score = 100.0 * ub / n;
  return report;
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  std::string s(buf);
  if (s == "-0.0" || s == "-0") s.erase(0, 1);
  return s;
}

nlohmann::json report_json(const Report& report) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& r : report.per_item) {
    nlohmann::json correct = nlohmann::json::object();
    for (const auto& [name, score] : r.scores) correct[name] = score;
    nlohmann::json j = {{"id", r.id},
                        {"chosen", r.chosen},
                        {"answers", r.answers},
                        {"scores", correct},
                        {"upper_bound", r.upper_bound},
                        {"trajectories", r.trajectories}};
    if (!r.error.empty()) j["error"] = r.error;
    items.push_back(std::move(j));
  }
  return {{"metric", std::string(metric_name(report.metric))},
          {"strategy", std::string(strategy_name(report.strategy))},
          {"config_hash", report.config_hash},
          {"items", report.per_item.size()},
          {"strategy_scores", report.strategy_scores},
          {"upper_bound_score", report.upper_bound_score},
          {"per_item", items}};
}

std::string report_table(const Report& report) {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof line, "metric: %s  items: %zu  config: %s\n", std::string(metric_name(report.metric)).c_str(),
                report.per_item.size(), report.config_hash.c_str());
  out << line;
  for (Strategy s : {Strategy::Ppl, Strategy::Confidence, Strategy::Ensemble}) {
    const std::string name(strategy_name(s));
    std::snprintf(line, sizeof line, "%-12s %6s%s\n", name.c_str(), format_fixed(report.strategy_scores.at(name)).c_str(),
                  s == report.strategy ? "  *" : "");
    out << line;
  }
  std::snprintf(line, sizeof line, "%-12s %6s\n", "upper_bound", format_fixed(report.upper_bound_score).c_str());
  out << line;
  return out.str();
}

std::string strategy_table(const std::vector<std::pair<std::string, Report>>& runs) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %10s %10s %10s %10s\n", "task", "ppl", "confidence", "ensemble", "upper");
  out << line;
  for (const auto& [name, r] : runs) {
    std::snprintf(line, sizeof line, "%-16s %10s %10s %10s %10s\n", name.c_str(),
                  format_fixed(r.strategy_scores.at("ppl")).c_str(),
                  format_fixed(r.strategy_scores.at("confidence")).c_str(),
                  format_fixed(r.strategy_scores.at("ensemble")).c_str(), format_fixed(r.upper_bound_score).c_str());
    out << line;
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Source resilience

Resilience source_resilience(const std::vector<std::pair<std::string, std::vector<double>>>& rows,
                             const std::vector<std::string>& task_names) {
  if (rows.size() < 2) throw Error(Errc::EmptyInput, "need at least two sources");
  const std::size_t tasks = rows.front().second.size();
  if (tasks == 0) throw Error(Errc::EmptyInput, "source rows are empty");
  for (const auto& [source, scores] : rows) {
    if (scores.size() != tasks)
      throw Error(Errc::RaggedRows, "source '" + source + "' has " + std::to_string(scores.size()) +
                                        " scores, expected " + std::to_string(tasks));
  }
  if (!task_names.empty() && task_names.size() != tasks)
    throw Error(Errc::RaggedRows, "task name count does not match row length");

  Resilience r;
  for (const auto& [source, scores] : rows) {
    ResilienceRow row{source, scores, std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(tasks)};
    r.rows.push_back(std::move(row));
  }
  const double k = static_cast<double>(r.rows.size());
  for (const auto& row : r.rows) r.avg += row.mean;
  r.avg /= k;
  double ss = 0.0;
  for (const auto& row : r.rows) ss += (row.mean - r.avg) * (row.mean - r.avg);
  r.var = std::sqrt(ss / (k - 1.0));

  std::ostringstream out;
  char cell[64];
  std::snprintf(cell, sizeof cell, "%-14s", "source");
  out << cell;
  for (std::size_t t = 0; t < tasks; ++t) {
    std::snprintf(cell, sizeof cell, " %8s", task_names.empty() ? ("task" + std::to_string(t + 1)).c_str() : task_names[t].c_str());
    out << cell;
  }
  out << "     mean\n";
  for (const auto& row : r.rows) {
    std::snprintf(cell, sizeof cell, "%-14s", row.source.c_str());
    out << cell;
    for (double s : row.scores) {
      std::snprintf(cell, sizeof cell, " %8s", format_fixed(s).c_str());
      out << cell;
    }
    std::snprintf(cell, sizeof cell, " %8s\n", format_fixed(row.mean).c_str());
    out << cell;
  }
  out << "AVG " << format_fixed(r.avg) << "  VAR " << format_fixed(r.var) << '\n';
  r.table = out.str();
  return r;
}

nlohmann::json resilience_json(const Resilience& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) rows.push_back({{"source", row.source}, {"scores", row.scores}, {"mean", row.mean}});
  return {{"rows", rows},
          {"avg", r.avg},
          {"var", r.var},
          {"avg_rounded", format_fixed(r.avg)},
          {"var_rounded", format_fixed(r.var)}};
}

// ---------------------------------------------------------------------------
// Input

std::vector<BenchmarkItem> read_benchmark(std::istream& in) {
  std::vector<BenchmarkItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    const std::string where = "benchmark line " + std::to_string(lineno) + ": ";
    try {
      const auto j = nlohmann::json::parse(line);
      BenchmarkItem item;
      item.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      item.question = j.at("question").get<std::string>();
      if (j.contains("choices")) item.choices = j["choices"].get<std::vector<std::string>>();
      const auto& g = j.at("gold");
      if (g.is_string())
        item.gold.push_back(g.get<std::string>());
      else
        item.gold = g.get<std::vector<std::string>>();
      if (item.gold.empty()) throw Error(Errc::ConfigError, where + "gold is empty");
      if (j.contains("candidates")) {
        int rank = 0;
        for (const auto& c : j["candidates"]) {
          Document d;
          d.title = c.value("title", "");
          d.snippet = c.value("snippet", c.value("body", c.value("text", "")));
          d.locator = c.value("locator", c.value("id", ""));
          d.rank = ++rank;
          item.candidates.push_back(std::move(d));
        }
      }
      items.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ConfigError, where + e.what());
    }
  }
  return items;
}

std::vector<BenchmarkItem> read_benchmark_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open benchmark file " + path.string());
  return read_benchmark(in);
}

std::vector<BenchmarkItem> filter_by_ids(std::span<const BenchmarkItem> items, std::span<const std::string> ids) {
  std::set<std::string_view> wanted(ids.begin(), ids.end());
  std::vector<BenchmarkItem> out;
  for (const auto& item : items) {
    if (wanted.count(item.id)) out.push_back(item);
  }
  return out;
}

const std::vector<TaskPreset>& task_presets() {
  static const std::vector<TaskPreset> presets = {
      {"arc_c", MetricKind::Accuracy, 1172, 2}, {"popqa", MetricKind::Match, 1399, 2},
      {"obqa", MetricKind::Accuracy, 500, 2},   {"hotpotqa", MetricKind::F1, 500, 2},
      {"2wiki", MetricKind::F1, 500, 4},        {"musique", MetricKind::F1, 500, 4},
  };
  return presets;
}

const TaskPreset* find_preset(std::string_view name) {
  for (const auto& p : task_presets()) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

}  // namespace qrefine
