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

#include "qrefine/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "qrefine/config.hpp"
#include "qrefine/errors.hpp"
#include "qrefine/text.hpp"

namespace qrefine {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  Overrides overrides;
  // infer
  std::string question;
  std::string input;
  // build-dataset
  std::string pool;
  std::optional<double> retention;
  // eval / compare-strategies
  std::vector<std::string> benchmarks;
};

// Resolves `name` inside the output directory; refuses paths that escape it.
fs::path output_path(const AppConfig& c, const fs::path& name) {
  const fs::path root = c.output_dir.lexically_normal();
  const fs::path p = (root / name).lexically_normal();
  const auto rel = p.lexically_relative(root);
  if (rel.empty() || *rel.begin() == "..") throw Error(Errc::RuntimeFailure, "refusing to write outside output_dir");
  fs::create_directories(p.parent_path());
  return p;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::RuntimeFailure, "cannot write " + path.string());
  f << content;
}

const char* selected_answer_key(Strategy s) {
  switch (s) {
    case Strategy::Ppl: return "ppl";
    case Strategy::Confidence: return "confidence";
    case Strategy::Ensemble: return "ensemble";
  }
  return "ensemble";
}

// ---------------------------------------------------------------------------

int cmd_infer(const Options& o, std::ostream& out) {
  AppConfig c = load_config(o.config, o.overrides);
  std::vector<std::string> questions;
  if (!o.question.empty()) questions.push_back(o.question);
  if (!o.input.empty()) {
    std::ifstream in(o.input);
    if (!in) throw Error(Errc::ConfigError, "cannot open input " + o.input);
    std::string line;
    while (std::getline(in, line)) {
      if (!text::trim(line).empty()) questions.emplace_back(text::trim(line));
    }
  }
  if (questions.empty()) throw Error(Errc::BadUsage, "infer needs --question or --input");

  Backends backends(c);
  std::ostringstream dump;
  for (const auto& q : questions) {
    auto retriever = backends.retriever_for(c.search.source, {});
    const auto trajectories = run(q, c.search, backends.generator(), *retriever);
    const auto scored = score_all(trajectories, c.selection);
    if (scored.empty()) throw Error(Errc::NoTrajectory, "no scorable trajectory for '" + q + "'");
    std::string answer;
    switch (c.search.strategy) {
      case Strategy::Ppl: answer = select_ppl(scored).trajectory.final_answer; break;
      case Strategy::Confidence: answer = select_confidence(scored).trajectory.final_answer; break;
      case Strategy::Ensemble:
        answer = select_ensemble_detail(scored, c.selection.ensemble_domain, c.selection.group_key).representative;
        break;
    }
    out << "question: " << q << '\n';
    out << "answer: " << answer << '\n';
    out << "strategy: " << selected_answer_key(c.search.strategy) << '\n';
    for (const auto& s : scored) {
      const std::string line = trajectory_record(s.trajectory, s.ppl, s.confidence).dump();
      out << line << '\n';
      dump << line << '\n';
    }
  }
  write_file(output_path(c, "infer/trajectories.jsonl"), dump.str());
  return kExitOk;
}

int cmd_build_dataset(const Options& o, std::ostream& out) {
  AppConfig c = load_config(o.config, o.overrides);
  fs::path pool = o.pool.empty() ? c.pool : fs::path(o.pool);
  if (pool.empty()) throw Error(Errc::ConfigError, "no pool given (dataset.pool or --pool)");
  const double retention = o.retention.value_or(c.retention);
  if (!(retention >= 0.0 && retention <= 1.0)) throw Error(Errc::BadUsage, "--retention must lie in [0, 1]");

  const auto raw = read_pool_file(pool);
  Backends backends(c);
  auto retriever = backends.retriever_for(c.search.source, {});
  BuildResult result = build_pool(raw, c.build, backends.annotator(), *retriever, c.hash);
  result.kept = apply_retention(std::move(result.kept), retention, c.seed);
  std::size_t retained = 0;
  for (const auto& inst : result.kept) retained += inst.answer_provenance == AnswerProvenance::OriginalRetained;
  result.manifest["retention"] = {{"ratio", retention}, {"seed", c.seed}, {"retained", retained}};

  const Histogram augmented = token_stats(result.kept, whitespace_token_count);
  const Histogram original = raw_token_stats(result.kept, whitespace_token_count);
  result.manifest["token_mean"] = {{"augmented", augmented.mean}, {"original", original.mean}};

  const fs::path dir = output_path(c, "dataset/manifest.json").parent_path();
  write_build_outputs(dir, result);
  out << "kept " << result.kept.size() << ", dropped " << result.dropped.size() << ", passthrough "
      << result.passthrough.size() << ", retained " << retained << '\n';
  for (const auto& [reason, n] : result.manifest["drops"].items()) out << "  drop " << reason << ": " << n << '\n';
  out << "wrote " << dir.string() << '\n';
  return kExitOk;
}

std::vector<const BenchmarkSpec*> chosen_benchmarks(const AppConfig& c, const std::vector<std::string>& names) {
  std::vector<const BenchmarkSpec*> out;
  for (const auto& b : c.benchmarks) {
    if (names.empty() || std::find(names.begin(), names.end(), b.name) != names.end()) out.push_back(&b);
  }
  for (const auto& n : names) {
    if (std::none_of(c.benchmarks.begin(), c.benchmarks.end(), [&](const BenchmarkSpec& b) { return b.name == n; }))
      throw Error(Errc::BadUsage, "unknown benchmark '" + n + "'");
  }
  if (out.empty()) throw Error(Errc::ConfigError, "no benchmarks configured (eval.benchmarks)");
  return out;
}

Report run_one(const AppConfig& c, const Overrides& o, const BenchmarkSpec& spec, Backends& backends,
               SourceKind source) {
  auto items = read_benchmark_file(spec.path);
  if (!spec.id_list.empty()) {
    std::ifstream in(spec.id_list);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
      if (!text::trim(line).empty()) ids.emplace_back(text::trim(line));
    }
    items = filter_by_ids(items, ids);
  }
  SearchConfig search = c.search;
  search.source = source;
  if (spec.depth && !o.depth) search.max_depth = *spec.depth;
  BenchmarkOptions options{spec.metric, c.selection, c.eval_workers};
  return run_benchmark(items, search, backends.generator(), backends.factory(source), options, c.hash);
}

int cmd_eval(const Options& o, std::ostream& out) {
  AppConfig c = load_config(o.config, o.overrides);
  Backends backends(c);
  for (const BenchmarkSpec* spec : chosen_benchmarks(c, o.benchmarks)) {
    const Report r = run_one(c, o.overrides, *spec, backends, c.search.source);
    write_file(output_path(c, "eval/" + spec->name + ".json"), report_json(r).dump(2) + "\n");
    out << "== " << spec->name << '\n' << report_table(r);
  }
  return kExitOk;
}

int cmd_compare(const Options& o, std::ostream& out) {
  AppConfig c = load_config(o.config, o.overrides);
  Backends backends(c);
  std::vector<std::pair<std::string, Report>> runs;
  nlohmann::json j = nlohmann::json::object();
  for (const BenchmarkSpec* spec : chosen_benchmarks(c, o.benchmarks)) {
    Report r = run_one(c, o.overrides, *spec, backends, c.search.source);
    j[spec->name] = {{"strategy_scores", r.strategy_scores}, {"upper_bound_score", r.upper_bound_score}};
    runs.emplace_back(spec->name, std::move(r));
  }
  const std::string table = strategy_table(runs);
  write_file(output_path(c, "compare/strategies.json"),
             nlohmann::json{{"config_hash", c.hash}, {"tasks", j}}.dump(2) + "\n");
  write_file(output_path(c, "compare/strategies.txt"), table);
  out << table;
  return kExitOk;
}

int cmd_resilience(const Options& o, std::ostream& out) {
  AppConfig c = load_config(o.config, o.overrides);
  auto rows = c.resilience.rows;
  std::vector<std::string> tasks = c.resilience.tasks;
  if (rows.empty()) {
    if (c.resilience.sources.empty())
      throw Error(Errc::ConfigError, "eval.resilience needs rows or sources");
    Backends backends(c);
    const auto specs = chosen_benchmarks(c, o.benchmarks);
    if (tasks.empty()) {
      for (const auto* s : specs) tasks.push_back(s->name);
    }
    for (const auto& [name, kind] : c.resilience.sources) {
      std::vector<double> scores;
      for (const auto* spec : specs) {
        const Report r = run_one(c, o.overrides, *spec, backends, kind);
        scores.push_back(r.strategy_scores.at(selected_answer_key(c.search.strategy)));
      }
      rows.emplace_back(name, std::move(scores));
    }
  }
  const Resilience r = source_resilience(rows, tasks);
  auto j = resilience_json(r);
  j["config_hash"] = c.hash;
  write_file(output_path(c, "resilience/report.json"), j.dump(2) + "\n");
  write_file(output_path(c, "resilience/table.txt"), r.table);
  out << r.table;
  return kExitOk;
}

int exit_code(Errc code) {
  switch (code) {
    case Errc::BadUsage: return kExitUsage;
    case Errc::ConfigError: return kExitConfig;
    default: return kExitRuntime;
  }
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Query refinement retrieval-augmented generation toolkit", "qrefine"};
  app.require_subcommand(1);
  Options o;

  std::optional<std::uint64_t> seed;
  std::optional<std::string> source;
  std::optional<std::string> strategy;
  std::optional<int> width, depth, top_k;
  app.add_option("--config", o.config, "Configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--source", source, "Retrieval source")->check(CLI::IsMember({"bm25", "embedding", "web"}));
  app.add_option("--strategy", strategy, "Selection strategy")
      ->check(CLI::IsMember({"ppl", "confidence", "ensemble"}));
  app.add_option("--width", width, "Exploration width")->check(CLI::PositiveNumber);
  app.add_option("--depth", depth, "Exploration depth")->check(CLI::NonNegativeNumber);
  app.add_option("--top-k", top_k, "Documents per retrieval")->check(CLI::PositiveNumber);

  auto* build = app.add_subcommand("build-dataset", "Build the search-augmented training set");
  build->add_option("--pool", o.pool, "Task pool file (overrides dataset.pool)");
  build->add_option("--retention", o.retention, "Fraction of original answers retained");
  auto* infer = app.add_subcommand("infer", "Answer questions with tree decoding");
  infer->add_option("--question", o.question, "Question text");
  infer->add_option("--input", o.input, "File with one question per line");
  auto* eval = app.add_subcommand("eval", "Run configured benchmarks");
  eval->add_option("--benchmark", o.benchmarks, "Benchmark names (default: all)");
  auto* compare = app.add_subcommand("compare-strategies", "Per-strategy scores across benchmarks");
  compare->add_option("--benchmark", o.benchmarks, "Benchmark names (default: all)");
  auto* resilience = app.add_subcommand("resilience", "Scores across retrieval sources");
  resilience->add_option("--benchmark", o.benchmarks, "Benchmark names (default: all)");
  for (auto* sub : {build, infer, eval, compare, resilience}) sub->fallthrough();

  if (!args.empty() && !args.front().empty() && args.front()[0] != '-' &&
      !app.get_subcommand_no_throw(args.front())) {
    err << "error: unknown subcommand '" << args.front() << "'\n\n" << app.help();
    return kExitUsage;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  if (o.config.empty()) {
    err << "error: --config is required\n\n" << app.help();
    return kExitUsage;
  }
  o.overrides = Overrides{seed, source, strategy, width, depth, top_k};

  try {
    if (build->parsed()) return cmd_build_dataset(o, out);
    if (infer->parsed()) return cmd_infer(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (compare->parsed()) return cmd_compare(o, out);
    if (resilience->parsed()) return cmd_resilience(o, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace qrefine
