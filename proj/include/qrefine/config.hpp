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
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qrefine/dataset.hpp"
#include "qrefine/engine.hpp"
#include "qrefine/evaluation.hpp"
#include "qrefine/generator.hpp"
#include "qrefine/retrieval.hpp"
#include "qrefine/selection.hpp"

namespace qrefine {

struct GeneratorSpec {
  std::string kind = "scripted";  // scripted | remote
  std::filesystem::path script;
  double default_log_prob = -1.0;
  RemoteGeneratorOptions remote;
};

struct EmbeddingSpec {
  std::string kind = "hashing";  // hashing | remote
  std::size_t dimension = 256;
  RemoteEmbedderOptions remote;
};

struct SearchClientSpec {
  std::string kind = "fixture";  // fixture | remote
  std::filesystem::path fixture;
  HttpSearchOptions remote;
};

struct BenchmarkSpec {
  std::string name;
  std::filesystem::path path;
  MetricKind metric = MetricKind::Accuracy;
  std::optional<int> depth;
  std::filesystem::path id_list;  // optional subset selection
};

struct ResilienceSpec {
  std::vector<std::string> tasks;
  // Precomputed rows; when empty the rows are measured by running every
  // benchmark against each listed source.
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  std::vector<std::pair<std::string, SourceKind>> sources;
};

struct AppConfig {
  std::filesystem::path base_dir;
  SearchConfig search;
  SelectionOptions selection;
  GeneratorSpec generator;
  std::optional<GeneratorSpec> annotator;  // defaults to the generator backend
  EmbeddingSpec embedding;
  SearchClientSpec search_client;
  std::filesystem::path corpus;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;

  // dataset
  std::filesystem::path pool;
  double retention = 0.0;
  BuildConfig build;

  // evaluation
  std::vector<BenchmarkSpec> benchmarks;
  int eval_workers = 1;
  ResilienceSpec resilience;

  nlohmann::json effective;  // config after flag overrides, secrets excluded
  std::string hash;
};

// Flag overrides applied on top of the file before validation.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> source;
  std::optional<std::string> strategy;
  std::optional<int> width;
  std::optional<int> depth;
  std::optional<int> top_k;
};

std::string config_hash(const nlohmann::json& effective);

// Relative paths resolve against base_dir and must exist. Throws Error{ConfigError}.
AppConfig parse_config(nlohmann::json j, const std::filesystem::path& base_dir, const Overrides& overrides = {});
AppConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});

std::unique_ptr<Generator> make_generator(const GeneratorSpec& spec);
std::unique_ptr<Embedder> make_embedder(const EmbeddingSpec& spec);
std::unique_ptr<SearchClient> make_search_client(const SearchClientSpec& spec);

// Long-lived backends for one command invocation. Components are created on
// first use so a command only needs the sections it touches.
class Backends {
 public:
  explicit Backends(const AppConfig& config) : config_(config) {}

  Generator& generator();
  Generator& annotator();
  Embedder& embedder();
  SearchClient& search_client();
  const CorpusIndex& corpus();

  // Retriever for a benchmark item: candidate pools take precedence over the
  // shared corpus for bm25 and embedding sources.
  std::unique_ptr<Retriever> retriever_for(SourceKind source, const std::vector<Document>& candidates);
  RetrieverFactory factory(SourceKind source);

 private:
  const AppConfig& config_;
  std::unique_ptr<Generator> generator_;
  std::unique_ptr<Generator> annotator_;
  std::unique_ptr<Embedder> embedder_;
  std::unique_ptr<SearchClient> search_client_;
  std::unique_ptr<CorpusIndex> corpus_;
  std::vector<Document> corpus_docs_;
};

}  // namespace qrefine
