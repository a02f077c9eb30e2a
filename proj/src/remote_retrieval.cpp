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

#include "qrefine/errors.hpp"
#include "qrefine/http_client.hpp"
#include "qrefine/retrieval.hpp"

namespace qrefine {

using nlohmann::json;

namespace {

double retry_after(const HttpResponse& resp) {
  auto it = resp.headers.find("retry-after");
  if (it == resp.headers.end()) return -1.0;
  try {
    return std::stod(it->second);
  } catch (...) {
    return -1.0;
  }
}

}  // namespace

std::vector<EmbeddingVector> parse_embedding_response(const json& body) {
  std::vector<EmbeddingVector> out;
  try {
    if (body.contains("embeddings")) {
      for (const auto& v : body["embeddings"]) out.push_back({v.get<std::vector<double>>()});
    } else if (body.contains("data")) {
      for (const auto& item : body["data"]) out.push_back({item.at("embedding").get<std::vector<double>>()});
    } else {
      throw Error(Errc::EmbeddingUnavailable, "embedding response without vectors");
    }
  } catch (const json::exception& e) {
    throw Error(Errc::EmbeddingUnavailable, e.what());
  }
  for (const auto& v : out) {
    if (v.dimension() != out.front().dimension())
      throw Error(Errc::DimensionMismatch, "embedding service returned vectors of unequal dimension");
  }
  return out;
}

struct RemoteEmbedder::Impl {
  explicit Impl(RemoteEmbedderOptions opts)
      : options(std::move(opts)),
        url(parse_url(options.url)),
        client(url, options.timeout_seconds),
        limiter(options.max_in_flight),
        bucket(options.requests_per_second, options.burst) {}

  RemoteEmbedderOptions options;
  Url url;
  HttpClient client;
  InFlightLimiter limiter;
  TokenBucket bucket;
};

RemoteEmbedder::RemoteEmbedder(RemoteEmbedderOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

RemoteEmbedder::~RemoteEmbedder() = default;

std::vector<EmbeddingVector> RemoteEmbedder::embed(std::span<const std::string> texts) {
  json request = {{"input", std::vector<std::string>(texts.begin(), texts.end())}};
  if (!impl_->options.model.empty()) request["model"] = impl_->options.model;
  HeaderList headers;
  if (!impl_->options.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + impl_->options.api_key);
  impl_->bucket.acquire();
  HttpResponse resp;
  {
    InFlightLimiter::Guard guard(impl_->limiter);
    resp = impl_->client.post_json(impl_->url.path, request.dump(), headers);
  }
  if (resp.status == 429) throw RateLimitedError("embedding service rate limited", retry_after(resp));
  if (resp.status == 0) throw Error(Errc::EmbeddingUnavailable, impl_->options.url + ": " + resp.error);
  if (resp.status >= 400)
    throw Error(Errc::EmbeddingUnavailable, "HTTP " + std::to_string(resp.status) + " from embedding service");
  json body;
  try {
    body = json::parse(resp.body);
  } catch (const json::exception& e) {
    throw Error(Errc::EmbeddingUnavailable, e.what());
  }
  auto out = parse_embedding_response(body);
  if (out.size() != texts.size())
    throw Error(Errc::EmbeddingUnavailable, "embedding count does not match input count");
  return out;
}

struct HttpSearchClient::Impl {
  explicit Impl(HttpSearchOptions opts)
      : options(std::move(opts)),
        url(parse_url(options.url)),
        client(url, options.timeout_seconds),
        limiter(options.max_in_flight),
        bucket(options.requests_per_second, options.burst) {}

  HttpSearchOptions options;
  Url url;
  HttpClient client;
  InFlightLimiter limiter;
  TokenBucket bucket;
};

HttpSearchClient::HttpSearchClient(HttpSearchOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

HttpSearchClient::~HttpSearchClient() = default;

std::vector<SearchHit> HttpSearchClient::search(std::string_view query, int k) {
  std::string path = impl_->url.path;
  path += path.find('?') == std::string::npos ? '?' : '&';
  path += "q=" + url_encode(query) + "&count=" + std::to_string(k);
  HeaderList headers{{"Accept", "application/json"}};
  if (!impl_->options.api_key.empty()) headers.emplace_back(impl_->options.key_header, impl_->options.api_key);
  impl_->bucket.acquire();
  HttpResponse resp;
  {
    InFlightLimiter::Guard guard(impl_->limiter);
    resp = impl_->client.get(path, headers);
  }
  if (resp.status == 429) throw RateLimitedError("search service rate limited", retry_after(resp));
  if (resp.status == 0) throw Error(Errc::SearchUnavailable, impl_->options.url + ": " + resp.error);
  if (resp.status >= 400)
    throw Error(Errc::SearchUnavailable, "HTTP " + std::to_string(resp.status) + " from search service");
  try {
    auto hits = parse_search_response(json::parse(resp.body));
    if (hits.size() > static_cast<std::size_t>(k)) hits.resize(static_cast<std::size_t>(k));
    return hits;
  } catch (const json::exception& e) {
    throw Error(Errc::SearchUnavailable, e.what());
  }
}

}  // namespace qrefine
