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

#include "qrefine/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include "qrefine/errors.hpp"
#include "qrefine/text.hpp"

namespace qrefine {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

[[noreturn]] void fail(const std::string& msg) { throw Error(Errc::ConfigError, msg); }

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  if (!j[key].is_object()) fail(std::string("'") + key + "' must be an object");
  return j[key];
}

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* allowed) { return k == allowed; }))
      fail("unknown key '" + k + "' in " + where);
  }
}

template <class T>
T get(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception&) {
    fail(where + "." + key + " has the wrong type");
  }
}

fs::path existing(const fs::path& base, const std::string& value, const std::string& what) {
  if (value.empty()) fail(what + " is empty");
  fs::path p = fs::path(value).is_absolute() ? fs::path(value) : base / value;
  p = p.lexically_normal();
  if (!fs::exists(p)) fail(what + " does not exist: " + p.string());
  return p;
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

TokenTable parse_tokens(const json& j) {
  TokenTable t;
  only_keys(j, "tokens", {"rewrite", "decompose", "disambiguate", "answer", "evidence_open", "evidence_close", "end"});
  t.rewrite = get(j, "rewrite", t.rewrite, "tokens");
  t.decompose = get(j, "decompose", t.decompose, "tokens");
  t.disambiguate = get(j, "disambiguate", t.disambiguate, "tokens");
  t.answer = get(j, "answer", t.answer, "tokens");
  t.evidence_open = get(j, "evidence_open", t.evidence_open, "tokens");
  t.evidence_close = get(j, "evidence_close", t.evidence_close, "tokens");
  t.end = get(j, "end", t.end, "tokens");
  if (auto problem = t.check(); !problem.empty()) fail("tokens: " + problem);
  return t;
}

GeneratorSpec parse_generator(const json& j, const fs::path& base, const std::string& where) {
  only_keys(j, where, {"kind", "script", "default_log_prob", "url", "model", "max_in_flight", "timeout_seconds"});
  GeneratorSpec g;
  g.kind = get<std::string>(j, "kind", "scripted", where);
  if (g.kind == "scripted") {
    g.script = existing(base, get<std::string>(j, "script", "", where), where + ".script");
    g.default_log_prob = get(j, "default_log_prob", -1.0, where);
    if (g.default_log_prob > 0.0) fail(where + ".default_log_prob must be <= 0");
  } else if (g.kind == "remote") {
    g.remote.url = get<std::string>(j, "url", env_or("RQ_GENERATOR_URL", ""), where);
    if (g.remote.url.empty()) fail(where + ".url missing and RQ_GENERATOR_URL unset");
    g.remote.model = get<std::string>(j, "model", "", where);
    g.remote.max_in_flight = get(j, "max_in_flight", 4, where);
    g.remote.timeout_seconds = get(j, "timeout_seconds", 60, where);
    if (g.remote.max_in_flight < 1) fail(where + ".max_in_flight must be positive");
  } else {
    fail(where + ".kind must be scripted or remote");
  }
  return g;
}

EmbeddingSpec parse_embedding(const json& j) {
  only_keys(j, "embedding", {"kind", "dimension", "url", "model", "max_in_flight", "rps", "burst", "timeout_seconds"});
  EmbeddingSpec e;
  e.kind = get<std::string>(j, "kind", "hashing", "embedding");
  if (e.kind == "hashing") {
    e.dimension = get<std::size_t>(j, "dimension", 256, "embedding");
    if (e.dimension == 0) fail("embedding.dimension must be positive");
  } else if (e.kind == "remote") {
    e.remote.url = get<std::string>(j, "url", env_or("RQ_EMBED_URL", ""), "embedding");
    if (e.remote.url.empty()) fail("embedding.url missing and RQ_EMBED_URL unset");
    e.remote.model = get<std::string>(j, "model", "", "embedding");
    e.remote.max_in_flight = get(j, "max_in_flight", 4, "embedding");
    e.remote.requests_per_second = get(j, "rps", 0.0, "embedding");
    e.remote.burst = get(j, "burst", 1.0, "embedding");
    e.remote.timeout_seconds = get(j, "timeout_seconds", 60, "embedding");
  } else {
    fail("embedding.kind must be hashing or remote");
  }
  return e;
}

SearchClientSpec parse_search_client(const json& j, const fs::path& base) {
  only_keys(j, "search_client",
            {"kind", "fixture", "url", "key_header", "max_in_flight", "rps", "burst", "timeout_seconds"});
  SearchClientSpec s;
  s.kind = get<std::string>(j, "kind", "fixture", "search_client");
  if (s.kind == "fixture") {
    if (j.contains("fixture"))
      s.fixture = existing(base, get<std::string>(j, "fixture", "", "search_client"), "search_client.fixture");
  } else if (s.kind == "remote") {
    s.remote.url = get<std::string>(j, "url", "", "search_client");
    if (s.remote.url.empty()) fail("search_client.url missing");
    s.remote.api_key = env_or("RQ_SEARCH_KEY", "");
    s.remote.key_header = get<std::string>(j, "key_header", s.remote.key_header, "search_client");
    s.remote.max_in_flight = get(j, "max_in_flight", 2, "search_client");
    s.remote.requests_per_second = get(j, "rps", 1.0, "search_client");
    s.remote.burst = get(j, "burst", 1.0, "search_client");
    s.remote.timeout_seconds = get(j, "timeout_seconds", 30, "search_client");
  } else {
    fail("search_client.kind must be fixture or remote");
  }
  return s;
}

SelectionOptions parse_selection(const json& j) {
  only_keys(j, "selection", {"ppl_scope", "ensemble_domain", "group_key", "confidence_mean"});
  SelectionOptions s;
  const auto scope = get<std::string>(j, "ppl_scope", "generated", "selection");
  if (scope == "generated") s.ppl_scope = PplScope::GeneratedOnly;
  else if (scope == "full") s.ppl_scope = PplScope::FullSequence;
  else fail("selection.ppl_scope must be generated or full");
  const auto domain = get<std::string>(j, "ensemble_domain", "probability", "selection");
  if (domain == "probability") s.ensemble_domain = EnsembleDomain::Probability;
  else if (domain == "log_sum") s.ensemble_domain = EnsembleDomain::LogSum;
  else fail("selection.ensemble_domain must be probability or log_sum");
  const auto key = get<std::string>(j, "group_key", "normalized", "selection");
  if (key == "normalized") s.group_key = GroupKey::Normalized;
  else if (key == "raw") s.group_key = GroupKey::Raw;
  else fail("selection.group_key must be normalized or raw");
  s.confidence_per_token_mean = get(j, "confidence_mean", false, "selection");
  return s;
}

void parse_search(const json& j, AppConfig& c) {
  only_keys(j, "search", {"width", "depth", "top_k", "source", "strategy", "workers", "call_budget", "retries",
                          "score_evidence", "max_tokens", "temperature"});
  auto& s = c.search;
  s.width = get(j, "width", s.width, "search");
  s.max_depth = get(j, "depth", s.max_depth, "search");
  s.top_k = get(j, "top_k", s.top_k, "search");
  const auto source = get<std::string>(j, "source", std::string(source_name(s.source)), "search");
  if (auto k = source_from_name(source)) s.source = *k;
  else fail("search.source must be bm25, embedding or web");
  const auto strategy = get<std::string>(j, "strategy", std::string(strategy_name(s.strategy)), "search");
  if (auto k = strategy_from_name(strategy)) s.strategy = *k;
  else fail("search.strategy must be ppl, confidence or ensemble");
  s.workers = get(j, "workers", s.workers, "search");
  s.call_budget = get<std::size_t>(j, "call_budget", s.call_budget, "search");
  s.retries = get(j, "retries", s.retries, "search");
  s.score_evidence = get(j, "score_evidence", s.score_evidence, "search");
  s.decode.max_tokens = get(j, "max_tokens", s.decode.max_tokens, "search");
  s.decode.temperature = get(j, "temperature", s.decode.temperature, "search");
  if (s.width < 1) fail("search.width must be positive");
  if (s.max_depth < 0) fail("search.depth must be non-negative");
  if (s.top_k < 1) fail("search.top_k must be positive");
  if (s.workers < 1) fail("search.workers must be positive");
  if (s.retries < 0) fail("search.retries must be non-negative");
  if (s.decode.max_tokens < 1) fail("search.max_tokens must be positive");
}

void parse_dataset(const json& j, const fs::path& base, AppConfig& c) {
  only_keys(j, "dataset", {"pool", "retention", "top_k", "workers", "max_tokens", "max_turns_multi_hop",
                           "max_turns_other", "sources", "passthrough"});
  if (j.contains("pool")) c.pool = existing(base, get<std::string>(j, "pool", "", "dataset"), "dataset.pool");
  c.retention = get(j, "retention", 0.0, "dataset");
  if (!(c.retention >= 0.0 && c.retention <= 1.0)) fail("dataset.retention must lie in [0, 1]");
  auto& b = c.build;
  b.top_k = get(j, "top_k", b.top_k, "dataset");
  b.workers = get(j, "workers", b.workers, "dataset");
  b.max_tokens = get(j, "max_tokens", b.max_tokens, "dataset");
  b.max_turns_multi_hop = get(j, "max_turns_multi_hop", b.max_turns_multi_hop, "dataset");
  b.max_turns_other = get(j, "max_turns_other", b.max_turns_other, "dataset");
  if (b.top_k < 1 || b.workers < 1 || b.max_tokens < 1 || b.max_turns_multi_hop < 1 || b.max_turns_other < 1)
    fail("dataset limits must be positive");
  if (j.contains("sources")) {
    if (!j["sources"].is_object()) fail("dataset.sources must map source names to categories");
    for (const auto& [name, cat] : j["sources"].items()) {
      auto k = cat.is_string() ? category_from_name(cat.get<std::string>()) : std::nullopt;
      if (!k) fail("dataset.sources." + name + " must be multi_turn, multi_hop or ambiguous");
      b.sources.categories[SourceMap::key(name)] = *k;
    }
  }
  if (j.contains("passthrough")) {
    b.sources.passthrough.clear();
    for (const auto& name : get<std::vector<std::string>>(j, "passthrough", {}, "dataset"))
      b.sources.passthrough.insert(SourceMap::key(name));
  }
}

void parse_eval(const json& j, const fs::path& base, AppConfig& c) {
  only_keys(j, "eval", {"workers", "benchmarks", "resilience"});
  c.eval_workers = get(j, "workers", 1, "eval");
  if (c.eval_workers < 1) fail("eval.workers must be positive");
  if (j.contains("benchmarks")) {
    if (!j["benchmarks"].is_array()) fail("eval.benchmarks must be an array");
    for (const auto& b : j["benchmarks"]) {
      only_keys(b, "eval.benchmarks[]", {"name", "path", "metric", "depth", "id_list"});
      BenchmarkSpec spec;
      spec.name = get<std::string>(b, "name", "", "eval.benchmarks[]");
      if (spec.name.empty()) fail("eval.benchmarks[] needs a name");
      spec.path = existing(base, get<std::string>(b, "path", "", "eval.benchmarks[]"), "benchmark " + spec.name);
      const auto metric = get<std::string>(b, "metric", "accuracy", "eval.benchmarks[]");
      if (auto m = metric_from_name(metric)) spec.metric = *m;
      else fail("benchmark " + spec.name + ": metric must be accuracy, match or f1");
      if (b.contains("depth")) spec.depth = get(b, "depth", 0, "eval.benchmarks[]");
      if (b.contains("id_list"))
        spec.id_list = existing(base, get<std::string>(b, "id_list", "", "eval.benchmarks[]"), "id list");
      c.benchmarks.push_back(std::move(spec));
    }
  }
  const json& r = section(j, "resilience");
  only_keys(r, "eval.resilience", {"tasks", "rows", "sources"});
  c.resilience.tasks = get<std::vector<std::string>>(r, "tasks", {}, "eval.resilience");
  if (r.contains("rows")) {
    for (const auto& row : r["rows"]) {
      c.resilience.rows.emplace_back(get<std::string>(row, "source", "", "eval.resilience.rows[]"),
                                     get<std::vector<double>>(row, "scores", {}, "eval.resilience.rows[]"));
    }
  }
  if (r.contains("sources")) {
    for (const auto& s : r["sources"]) {
      const auto name = get<std::string>(s, "name", "", "eval.resilience.sources[]");
      auto kind = source_from_name(get<std::string>(s, "source", "", "eval.resilience.sources[]"));
      if (!kind || name.empty()) fail("eval.resilience.sources[] needs a name and a source of bm25, embedding or web");
      c.resilience.sources.emplace_back(name, *kind);
    }
  }
}

}  // namespace

std::string config_hash(const json& effective) { return text::hex64(text::fnv1a64(effective.dump())); }

AppConfig parse_config(json j, const fs::path& base_dir, const Overrides& o) {
  if (!j.is_object()) fail("config must be a JSON object");
  only_keys(j, "config", {"tokens", "search", "selection", "generator", "annotator", "embedding", "search_client",
                          "corpus", "output_dir", "seed", "dataset", "eval"});

  // Overrides land in the document so the hash covers them.
  auto& search = j["search"];
  if (search.is_null()) search = json::object();
  if (o.source) search["source"] = *o.source;
  if (o.strategy) search["strategy"] = *o.strategy;
  if (o.width) search["width"] = *o.width;
  if (o.depth) search["depth"] = *o.depth;
  if (o.top_k) search["top_k"] = *o.top_k;
  if (o.seed) j["seed"] = *o.seed;

  AppConfig c;
  c.base_dir = base_dir;
  c.search.tokens = parse_tokens(section(j, "tokens"));
  c.build.tokens = c.search.tokens;
  parse_search(section(j, "search"), c);
  c.selection = parse_selection(section(j, "selection"));
  c.generator = parse_generator(section(j, "generator"), base_dir, "generator");
  if (j.contains("annotator")) c.annotator = parse_generator(section(j, "annotator"), base_dir, "annotator");
  c.embedding = parse_embedding(section(j, "embedding"));
  c.search_client = parse_search_client(section(j, "search_client"), base_dir);
  if (j.contains("corpus")) c.corpus = existing(base_dir, get<std::string>(j, "corpus", "", "config"), "corpus");
  const auto out = get<std::string>(j, "output_dir", "out", "config");
  c.output_dir = (fs::path(out).is_absolute() ? fs::path(out) : base_dir / out).lexically_normal();
  c.seed = get<std::uint64_t>(j, "seed", 0, "config");
  parse_dataset(section(j, "dataset"), base_dir, c);
  parse_eval(section(j, "eval"), base_dir, c);

  c.effective = std::move(j);
  c.hash = config_hash(c.effective);
  return c;
}

AppConfig load_config(const fs::path& path, const Overrides& overrides) {
  std::ifstream in(path);
  if (!in) fail("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    fail("config " + path.string() + ": " + e.what());
  }
  fs::path base = fs::absolute(path).parent_path();
  return parse_config(std::move(j), base, overrides);
}

// ---------------------------------------------------------------------------
// Factories

std::unique_ptr<Generator> make_generator(const GeneratorSpec& spec) {
  if (spec.kind == "scripted")
    return std::make_unique<ScriptedGenerator>(ScriptedGenerator::from_file(spec.script, spec.default_log_prob));
  return std::make_unique<RemoteGenerator>(spec.remote);
}

std::unique_ptr<Embedder> make_embedder(const EmbeddingSpec& spec) {
  if (spec.kind == "hashing") return std::make_unique<HashingEmbedder>(spec.dimension);
  return std::make_unique<RemoteEmbedder>(spec.remote);
}

std::unique_ptr<SearchClient> make_search_client(const SearchClientSpec& spec) {
  if (spec.kind == "fixture") {
    if (spec.fixture.empty()) return std::make_unique<FixtureSearchClient>();
    return std::make_unique<FixtureSearchClient>(FixtureSearchClient::from_file(spec.fixture));
  }
  return std::make_unique<HttpSearchClient>(spec.remote);
}

Generator& Backends::generator() {
  if (!generator_) generator_ = make_generator(config_.generator);
  return *generator_;
}

Generator& Backends::annotator() {
  if (!config_.annotator) return generator();
  if (!annotator_) annotator_ = make_generator(*config_.annotator);
  return *annotator_;
}

Embedder& Backends::embedder() {
  if (!embedder_) embedder_ = make_embedder(config_.embedding);
  return *embedder_;
}

SearchClient& Backends::search_client() {
  if (!search_client_) search_client_ = make_search_client(config_.search_client);
  return *search_client_;
}

const CorpusIndex& Backends::corpus() {
  if (!corpus_) {
    if (config_.corpus.empty()) fail("no corpus configured");
    corpus_ = std::make_unique<CorpusIndex>(CorpusIndex::from_file(config_.corpus));
    for (const auto& r : corpus_->records()) corpus_docs_.push_back(Document{r.title, r.body, r.id, 1, 0.0});
  }
  return *corpus_;
}

namespace {

class PoolRetriever final : public Retriever {
 public:
  explicit PoolRetriever(const std::vector<Document>& docs) {
    std::vector<CorpusRecord> records;
    for (std::size_t i = 0; i < docs.size(); ++i) {
      if (text::trim(docs[i].snippet).empty()) continue;
      records.push_back({docs[i].locator.empty() ? "c" + std::to_string(i) : docs[i].locator, docs[i].title,
                         docs[i].snippet});
    }
    index_ = std::make_unique<CorpusIndex>(std::move(records));
    inner_ = std::make_unique<Bm25Retriever>(*index_);
  }
  std::vector<Document> retrieve(std::string_view query, int k) override { return inner_->retrieve(query, k); }

 private:
  std::unique_ptr<CorpusIndex> index_;
  std::unique_ptr<Bm25Retriever> inner_;
};

}  // namespace

std::unique_ptr<Retriever> Backends::retriever_for(SourceKind source, const std::vector<Document>& candidates) {
  switch (source) {
    case SourceKind::Bm25Corpus:
      if (!candidates.empty()) return std::make_unique<PoolRetriever>(candidates);
      return std::make_unique<Bm25Retriever>(corpus());
    case SourceKind::EmbeddingCandidates:
      if (!candidates.empty()) return std::make_unique<EmbeddingRetriever>(candidates, embedder());
      corpus();
      return std::make_unique<EmbeddingRetriever>(corpus_docs_, embedder());
    case SourceKind::WebSearch:
      return std::make_unique<WebRetriever>(search_client());
  }
  fail("unknown retrieval source");
}

RetrieverFactory Backends::factory(SourceKind source) {
  // Shared backends are created here, before items run concurrently.
  if (source == SourceKind::WebSearch) search_client();
  if (source == SourceKind::EmbeddingCandidates) embedder();
  if (source != SourceKind::WebSearch && !config_.corpus.empty()) corpus();
  return [this, source](const BenchmarkItem& item) { return retriever_for(source, item.candidates); };
}

}  // namespace qrefine
