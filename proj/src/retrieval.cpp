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

#include "qrefine/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <set>

#include "qrefine/errors.hpp"
#include "qrefine/text.hpp"

namespace qrefine {

std::vector<std::string> bm25_tokenize(std::string_view s) {
  std::vector<std::string> out;
  std::string current;
  for (char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 128 && std::isalnum(u)) {
      current.push_back(static_cast<char>(std::tolower(u)));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

CorpusIndex::CorpusIndex(std::vector<CorpusRecord> records) : records_(std::move(records)) {
  if (records_.empty()) throw Error(Errc::EmptyIndex, "corpus has no documents");
  doc_len_.reserve(records_.size());
  term_freqs_.reserve(records_.size());
  std::size_t total_len = 0;
  for (std::size_t d = 0; d < records_.size(); ++d) {
    const auto& rec = records_[d];
    if (text::trim(rec.body).empty()) throw Error(Errc::ConfigError, "document '" + rec.id + "' has an empty body");
    if (!id_to_doc_.emplace(rec.id, d).second)
      throw Error(Errc::ConfigError, "duplicate document id '" + rec.id + "'");
    std::unordered_map<std::string, std::size_t> tf;
    const auto terms = bm25_tokenize(rec.body);
    for (const auto& t : terms) ++tf[t];
    doc_len_.push_back(terms.size());
    total_len += terms.size();
    for (const auto& [term, count] : tf) postings_[term].push_back({d, count});
    term_freqs_.push_back(std::move(tf));
  }
  avg_doc_len_ = static_cast<double>(total_len) / static_cast<double>(records_.size());
  if (avg_doc_len_ <= 0.0) throw Error(Errc::EmptyIndex, "corpus has no indexable terms");
}

CorpusIndex CorpusIndex::from_jsonl(std::istream& in) {
  std::vector<CorpusRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CorpusRecord rec;
      rec.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      rec.title = j.value("title", "");
      rec.body = j.at("body").get<std::string>();
      records.push_back(std::move(rec));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ConfigError, "corpus line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return CorpusIndex(std::move(records));
}

CorpusIndex CorpusIndex::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open corpus " + path.string());
  return from_jsonl(in);
}

std::size_t CorpusIndex::doc_freq(std::string_view term) const {
  auto it = postings_.find(std::string(term));
  return it == postings_.end() ? 0 : it->second.size();
}

std::size_t CorpusIndex::term_freq(std::size_t doc, std::string_view term) const {
  const auto& tf = term_freqs_.at(doc);
  auto it = tf.find(std::string(term));
  return it == tf.end() ? 0 : it->second;
}

std::size_t CorpusIndex::find(std::string_view id) const {
  auto it = id_to_doc_.find(std::string(id));
  return it == id_to_doc_.end() ? npos : it->second;
}

const std::vector<CorpusIndex::Posting>& CorpusIndex::postings(std::string_view term) const {
  static const std::vector<Posting> kEmpty;
  auto it = postings_.find(std::string(term));
  return it == postings_.end() ? kEmpty : it->second;
}

double bm25_idf(std::size_t total_docs, std::size_t doc_freq) {
  const double n = static_cast<double>(total_docs);
  const double df = static_cast<double>(doc_freq);
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

namespace {

void check_params(const Bm25Params& p) {
  if (!(p.k1 > 0.0)) throw Error(Errc::InvariantViolation, "BM25 k1 must be positive");
  if (!(p.b >= 0.0 && p.b <= 1.0)) throw Error(Errc::InvariantViolation, "BM25 b must lie in [0, 1]");
}

double term_weight(double idf, double tf, double doc_len, double avg_len, const Bm25Params& p) {
  return idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * doc_len / avg_len));
}

}  // namespace

double bm25_score(std::span<const std::string> query_terms, std::string_view doc_id, const CorpusIndex& index,
                  const Bm25Params& params) {
  check_params(params);
  const std::size_t doc = index.find(doc_id);
  if (doc == CorpusIndex::npos) throw Error(Errc::UnknownDocument, "no document '" + std::string(doc_id) + "'");
  const double len = static_cast<double>(index.doc_len(doc));
  double score = 0.0;
  for (const auto& term : query_terms) {
    const std::size_t tf = index.term_freq(doc, term);
    if (tf == 0) continue;
    score += term_weight(bm25_idf(index.total_docs(), index.doc_freq(term)), static_cast<double>(tf), len,
                         index.avg_doc_len(), params);
  }
  return score;
}

std::vector<Document> retrieve_bm25(std::string_view query, int k, const CorpusIndex& index,
                                    const Bm25Params& params) {
  check_params(params);
  if (k < 1) throw Error(Errc::InvariantViolation, "k must be >= 1");
  const std::size_t n = index.total_docs();
  std::vector<double> scores(n, 0.0);
  for (const auto& term : bm25_tokenize(query)) {
    const auto& postings = index.postings(term);
    if (postings.empty()) continue;
    const double idf = bm25_idf(n, postings.size());
    for (const auto& p : postings) {
      scores[p.doc] += term_weight(idf, static_cast<double>(p.tf), static_cast<double>(index.doc_len(p.doc)),
                                   index.avg_doc_len(), params);
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return index.record(a).id < index.record(b).id;
                    });
  std::vector<Document> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    const auto& rec = index.record(order[i]);
    out.push_back(Document{rec.title, rec.body, rec.id, static_cast<int>(i) + 1, scores[order[i]]});
  }
  return out;
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dimension() != b.dimension())
    throw Error(Errc::DimensionMismatch, std::to_string(a.dimension()) + " vs " + std::to_string(b.dimension()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

HashingEmbedder::HashingEmbedder(std::size_t dimension) : dimension_(dimension) {
  if (dimension_ == 0) throw Error(Errc::ConfigError, "embedding dimension must be positive");
}

std::vector<EmbeddingVector> HashingEmbedder::embed(std::span<const std::string> texts) {
  std::vector<EmbeddingVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) {
    EmbeddingVector v{std::vector<double>(dimension_, 0.0)};
    for (const auto& term : bm25_tokenize(t)) {
      const std::uint64_t h = text::fnv1a64(term);
      v.values[h % dimension_] += (h >> 63) != 0 ? -1.0 : 1.0;
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::string embedding_text(const Document& doc) {
  return doc.title.empty() ? doc.snippet : doc.title + " " + doc.snippet;
}

std::vector<Document> retrieve_embedding(std::string_view query, std::span<const Document> candidates, int k,
                                         Embedder& embedder) {
  if (candidates.empty()) throw Error(Errc::EmptyInput, "no candidate documents");
  if (k < 1) throw Error(Errc::InvariantViolation, "k must be >= 1");
  std::vector<std::string> texts;
  texts.reserve(candidates.size() + 1);
  texts.emplace_back(query);
  for (const auto& c : candidates) texts.push_back(embedding_text(c));
  const auto vectors = embedder.embed(texts);
  if (vectors.size() != texts.size())
    throw Error(Errc::EmbeddingUnavailable, "embedder returned " + std::to_string(vectors.size()) +
                                                " vectors for " + std::to_string(texts.size()) + " texts");
  const std::size_t dim = vectors.front().dimension();
  if (dim == 0) throw Error(Errc::EmbeddingUnavailable, "embedder returned empty vectors");
  std::vector<double> sims(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (vectors[i + 1].dimension() != dim)
      throw Error(Errc::DimensionMismatch, "candidate " + std::to_string(i) + " has dimension " +
                                               std::to_string(vectors[i + 1].dimension()) + ", query has " +
                                               std::to_string(dim));
    sims[i] = cosine_similarity(vectors.front(), vectors[i + 1]);
  }
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sims[a] > sims[b]; });
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  std::vector<Document> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    Document d = candidates[order[i]];
    d.rank = static_cast<int>(i) + 1;
    d.score = sims[order[i]];
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<SearchHit> parse_search_response(const nlohmann::json& body) {
  std::vector<SearchHit> out;
  const nlohmann::json* list = nullptr;
  const char* title_key = "title";
  if (body.contains("results") && body["results"].is_array()) {
    list = &body["results"];
  } else if (body.contains("webPages") && body["webPages"].contains("value")) {
    list = &body["webPages"]["value"];
    title_key = "name";
  } else {
    throw Error(Errc::SearchUnavailable, "search response without a result list");
  }
  for (const auto& r : *list) {
    SearchHit hit;
    hit.title = r.value(title_key, "");
    hit.snippet = r.value("snippet", "");
    hit.url = r.value("url", "");
    out.push_back(std::move(hit));
  }
  return out;
}

FixtureSearchClient FixtureSearchClient::from_jsonl(std::istream& in) {
  FixtureSearchClient client;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      client.add(j.at("query").get<std::string>(), parse_search_response(j));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ConfigError, "search fixture line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return client;
}

FixtureSearchClient FixtureSearchClient::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open search fixture " + path.string());
  return from_jsonl(in);
}

void FixtureSearchClient::add(std::string query, std::vector<SearchHit> hits) {
  pages_[std::move(query)] = std::move(hits);
}

std::vector<SearchHit> FixtureSearchClient::search(std::string_view query, int k) {
  auto it = pages_.find(query);
  if (it == pages_.end()) return {};
  std::vector<SearchHit> out = it->second;
  if (k >= 0 && out.size() > static_cast<std::size_t>(k)) out.resize(static_cast<std::size_t>(k));
  return out;
}

std::vector<Document> web_search(std::string_view query, int k, SearchClient& client) {
  if (k < 1) throw Error(Errc::InvariantViolation, "k must be >= 1");
  std::vector<Document> out;
  for (auto& hit : client.search(query, k)) {
    if (out.size() == static_cast<std::size_t>(k)) break;
    if (text::trim(hit.snippet).empty()) continue;
    out.push_back(Document{std::move(hit.title), std::move(hit.snippet), std::move(hit.url),
                           static_cast<int>(out.size()) + 1, 0.0});
  }
  return out;
}

std::vector<Document> Bm25Retriever::retrieve(std::string_view query, int k) {
  return retrieve_bm25(query, k, index_, params_);
}

std::vector<Document> EmbeddingRetriever::retrieve(std::string_view query, int k) {
  return retrieve_embedding(query, candidates_, k, embedder_);
}

std::vector<Document> WebRetriever::retrieve(std::string_view query, int k) {
  return web_search(query, k, client_);
}

bool support_aligned(std::span<const std::string> support_ids, std::span<const SearchStep> steps) {
  std::set<std::string_view> seen;
  for (const auto& step : steps) {
    for (const auto& d : step.documents) seen.insert(d.locator);
  }
  return std::all_of(support_ids.begin(), support_ids.end(),
                     [&](const std::string& id) { return seen.count(id) > 0; });
}

}  // namespace qrefine
