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
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "qrefine/protocol.hpp"
#include "qrefine/rate_limit.hpp"

namespace qrefine {

// Lowercase, split on anything that is not an ASCII letter or digit.
std::vector<std::string> bm25_tokenize(std::string_view text);

struct CorpusRecord {
  std::string id;
  std::string title;
  std::string body;
};

// Immutable BM25 index over a local corpus: per-document term frequencies,
// document frequencies and a postings list per term.
class CorpusIndex {
 public:
  struct Posting {
    std::size_t doc;  // position in records()
    std::size_t tf;
  };

  // Throws Error{EmptyIndex} for an empty record list and Error{ConfigError}
  // for duplicate ids or empty bodies.
  explicit CorpusIndex(std::vector<CorpusRecord> records);

  // Line-delimited {"id", "title", "body"} records.
  static CorpusIndex from_jsonl(std::istream& in);
  static CorpusIndex from_file(const std::filesystem::path& path);

  std::size_t total_docs() const noexcept { return records_.size(); }
  double avg_doc_len() const noexcept { return avg_doc_len_; }
  std::size_t doc_freq(std::string_view term) const;
  std::size_t doc_len(std::size_t doc) const { return doc_len_.at(doc); }
  std::size_t term_freq(std::size_t doc, std::string_view term) const;
  // Position of the document with this id, or npos.
  std::size_t find(std::string_view id) const;
  const CorpusRecord& record(std::size_t doc) const { return records_.at(doc); }
  const std::vector<CorpusRecord>& records() const noexcept { return records_; }
  const std::vector<Posting>& postings(std::string_view term) const;

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::vector<CorpusRecord> records_;
  std::vector<std::size_t> doc_len_;
  std::vector<std::unordered_map<std::string, std::size_t>> term_freqs_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  std::unordered_map<std::string, std::size_t> id_to_doc_;
  double avg_doc_len_ = 0.0;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

// ln((N - df + 0.5) / (df + 0.5) + 1); never negative.
double bm25_idf(std::size_t total_docs, std::size_t doc_freq);

double bm25_score(std::span<const std::string> query_terms, std::string_view doc_id, const CorpusIndex& index,
                  const Bm25Params& params = {});

// Top-k by score, descending; equal scores ordered by ascending id.
std::vector<Document> retrieve_bm25(std::string_view query, int k, const CorpusIndex& index,
                                    const Bm25Params& params = {});

struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dimension() const noexcept { return values.size(); }
};

// Returns 0 when either vector has zero norm. Throws Error{DimensionMismatch}.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

class Embedder {
 public:
  virtual ~Embedder() = default;
  // One vector per input text, all of equal dimension.
  virtual std::vector<EmbeddingVector> embed(std::span<const std::string> texts) = 0;
};

// Offline embedder: signed feature hashing of bm25_tokenize() terms into a
// fixed dimension. Deterministic across runs and platforms.
class HashingEmbedder final : public Embedder {
 public:
  explicit HashingEmbedder(std::size_t dimension = 256);
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;

 private:
  std::size_t dimension_;
};

struct RemoteEmbedderOptions {
  std::string url;
  std::string api_key;
  std::string model;
  int max_in_flight = 4;
  double requests_per_second = 0.0;
  double burst = 1.0;
  int timeout_seconds = 60;
};

// POST {"input": [texts], "model"?} -> {"data": [{"embedding": [...]}, ...]}
// or {"embeddings": [[...], ...]}.
class RemoteEmbedder final : public Embedder {
 public:
  explicit RemoteEmbedder(RemoteEmbedderOptions options);
  ~RemoteEmbedder() override;
  std::vector<EmbeddingVector> embed(std::span<const std::string> texts) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::vector<EmbeddingVector> parse_embedding_response(const nlohmann::json& body);

// Text embedded for a candidate document.
std::string embedding_text(const Document& doc);

// Ranks candidates by cosine similarity to the query, descending; equal
// similarities keep candidate order.
std::vector<Document> retrieve_embedding(std::string_view query, std::span<const Document> candidates, int k,
                                         Embedder& embedder);

struct SearchHit {
  std::string title;
  std::string snippet;
  std::string url;
};

class SearchClient {
 public:
  virtual ~SearchClient() = default;
  virtual std::vector<SearchHit> search(std::string_view query, int k) = 0;
};

// {"results": [{"title", "snippet", "url"}]} or the Bing-style
// {"webPages": {"value": [{"name", "snippet", "url"}]}}.
std::vector<SearchHit> parse_search_response(const nlohmann::json& body);

struct HttpSearchOptions {
  std::string url;  // endpoint; query passed as ?q=...&count=k
  std::string api_key;
  std::string key_header = "X-Subscription-Token";
  int max_in_flight = 2;
  double requests_per_second = 1.0;
  double burst = 1.0;
  int timeout_seconds = 30;
};

class HttpSearchClient final : public SearchClient {
 public:
  explicit HttpSearchClient(HttpSearchOptions options);
  ~HttpSearchClient() override;
  std::vector<SearchHit> search(std::string_view query, int k) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Replays recorded result pages: line-delimited {"query", "results": [...]}.
// Unknown queries return an empty page.
class FixtureSearchClient final : public SearchClient {
 public:
  FixtureSearchClient() = default;
  static FixtureSearchClient from_jsonl(std::istream& in);
  static FixtureSearchClient from_file(const std::filesystem::path& path);

  void add(std::string query, std::vector<SearchHit> hits);
  std::vector<SearchHit> search(std::string_view query, int k) override;

 private:
  std::map<std::string, std::vector<SearchHit>, std::less<>> pages_;
};

// Page order preserved; hits without a snippet are skipped; at most k results.
std::vector<Document> web_search(std::string_view query, int k, SearchClient& client);

// The single retrieval interface the engine sees.
class Retriever {
 public:
  virtual ~Retriever() = default;
  virtual std::vector<Document> retrieve(std::string_view query, int k) = 0;
};

class Bm25Retriever final : public Retriever {
 public:
  explicit Bm25Retriever(const CorpusIndex& index, Bm25Params params = {}) : index_(index), params_(params) {}
  std::vector<Document> retrieve(std::string_view query, int k) override;

 private:
  const CorpusIndex& index_;
  Bm25Params params_;
};

class EmbeddingRetriever final : public Retriever {
 public:
  EmbeddingRetriever(std::vector<Document> candidates, Embedder& embedder)
      : candidates_(std::move(candidates)), embedder_(embedder) {}
  std::vector<Document> retrieve(std::string_view query, int k) override;

 private:
  std::vector<Document> candidates_;
  Embedder& embedder_;
};

class WebRetriever final : public Retriever {
 public:
  explicit WebRetriever(SearchClient& client) : client_(client) {}
  std::vector<Document> retrieve(std::string_view query, int k) override;

 private:
  SearchClient& client_;
};

// True when every support id appears among the locators retrieved across all steps.
bool support_aligned(std::span<const std::string> support_ids, std::span<const SearchStep> steps);

}  // namespace qrefine
