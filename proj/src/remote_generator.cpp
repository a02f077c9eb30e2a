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

#include <cmath>
#include <limits>

#include "qrefine/errors.hpp"
#include "qrefine/generator.hpp"
#include "qrefine/http_client.hpp"
#include "qrefine/rate_limit.hpp"

namespace qrefine {

using nlohmann::json;

json make_completion_request(std::string_view prompt, const DecodeParams& params, int n,
                             std::string_view model) {
  json body = {
      {"prompt", std::string(prompt)},
      {"max_tokens", params.max_tokens},
      {"temperature", params.temperature},
      {"stop", params.stop_sequences},
      {"logprobs", params.want_log_probs},
      {"n", n},
  };
  if (!model.empty()) body["model"] = std::string(model);
  return body;
}

namespace {

// Flat fields first; the OpenAI legacy shape nests them under "logprobs".
const json* find_field(const json& choice, const char* key) {
  if (choice.contains(key)) return &choice[key];
  if (choice.contains("logprobs") && choice["logprobs"].is_object() && choice["logprobs"].contains(key))
    return &choice["logprobs"][key];
  return nullptr;
}

Completion parse_choice(const json& choice) {
  if (!choice.is_object() || !choice.contains("text") || !choice["text"].is_string())
    throw Error(Errc::MalformedResponse, "choice without text");
  Completion c;
  c.text = choice["text"].get<std::string>();
  const json* tokens = find_field(choice, "tokens");
  const json* lps = find_field(choice, "token_logprobs");
  if (tokens != nullptr && tokens->is_array()) {
    for (const auto& t : *tokens) c.tokens.push_back(t.get<std::string>());
  }
  if (lps != nullptr && lps->is_array()) {
    for (const auto& v : *lps) {
      if (v.is_null()) {
        c.log_probs.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      double lp = v.get<double>();
      if (lp > 0.0 && lp <= 1e-6) lp = 0.0;
      if (lp > 0.0) throw Error(Errc::MalformedResponse, "positive token log-probability");
      c.log_probs.push_back(lp);
    }
  }
  if (c.tokens.size() != c.log_probs.size())
    throw Error(Errc::MalformedResponse, "tokens and token_logprobs differ in length");
  if (!c.tokens.empty()) {
    std::string joined;
    for (const auto& t : c.tokens) joined += t;
    if (joined != c.text) throw Error(Errc::MalformedResponse, "tokens do not concatenate to text");
  }
  const json* reason = find_field(choice, "finish_reason");
  if (reason != nullptr && reason->is_string()) {
    const auto r = reason->get<std::string>();
    c.finish_reason = r == "stop"     ? FinishReason::StopToken
                      : r == "length" ? FinishReason::MaxTokens
                                      : FinishReason::EndOfSequence;
  }
  return c;
}

}  // namespace

std::vector<Completion> parse_completion_response(const json& body) {
  if (!body.is_object() || !body.contains("choices") || !body["choices"].is_array())
    throw Error(Errc::MalformedResponse, "response without a choices array");
  std::vector<Completion> out;
  try {
    for (const auto& choice : body["choices"]) out.push_back(parse_choice(choice));
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedResponse, e.what());
  }
  return out;
}

struct RemoteGenerator::Impl {
  explicit Impl(RemoteGeneratorOptions opts)
      : options(std::move(opts)),
        url(parse_url(options.url)),
        client(url, options.timeout_seconds),
        limiter(options.max_in_flight) {}

  RemoteGeneratorOptions options;
  Url url;
  HttpClient client;
  InFlightLimiter limiter;
};

RemoteGenerator::RemoteGenerator(RemoteGeneratorOptions options)
    : impl_(std::make_unique<Impl>(std::move(options))) {}

RemoteGenerator::~RemoteGenerator() = default;

json RemoteGenerator::post(const json& request) {
  HeaderList headers;
  if (!impl_->options.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + impl_->options.api_key);
  HttpResponse resp;
  {
    InFlightLimiter::Guard guard(impl_->limiter);
    resp = impl_->client.post_json(impl_->url.path, request.dump(), headers);
  }
  if (resp.status == 0) throw Error(Errc::EndpointUnavailable, impl_->options.url + ": " + resp.error);
  if (resp.status == 429) {
    double retry = -1.0;
    if (auto it = resp.headers.find("retry-after"); it != resp.headers.end()) {
      try {
        retry = std::stod(it->second);
      } catch (...) {
      }
    }
    throw RateLimitedError("generator endpoint rate limited", retry);
  }
  if (resp.status >= 500)
    throw Error(Errc::EndpointUnavailable, "HTTP " + std::to_string(resp.status) + " from " + impl_->options.url);
  if (resp.status >= 400)
    throw Error(Errc::Unsupported, "HTTP " + std::to_string(resp.status) + ": " + resp.body.substr(0, 200));
  try {
    return json::parse(resp.body);
  } catch (const json::exception& e) {
    throw Error(Errc::MalformedResponse, e.what());
  }
}

std::vector<Completion> RemoteGenerator::complete_many(std::string_view prompt, const DecodeParams& params,
                                                       int n) {
  if (prompt.empty()) throw Error(Errc::InvariantViolation, "empty prompt");
  if (n < 1) throw Error(Errc::InvariantViolation, "n must be >= 1");
  auto out = parse_completion_response(post(make_completion_request(prompt, params, n, impl_->options.model)));
  if (out.size() != static_cast<std::size_t>(n))
    throw Error(Errc::MalformedResponse,
                "requested " + std::to_string(n) + " choices, received " + std::to_string(out.size()));
  for (const auto& c : out) {
    if (params.want_log_probs && c.tokens.empty() && !c.text.empty())
      throw Error(Errc::MalformedResponse, "log-probabilities requested but absent");
    for (double lp : c.log_probs) {
      if (std::isnan(lp)) throw Error(Errc::MalformedResponse, "null token log-probability");
    }
  }
  return out;
}

// Echo request: the endpoint scores prompt+target without generating, and the
// tokens past the prompt boundary belong to the target.
std::vector<double> RemoteGenerator::score_continuation(std::string_view prompt, std::string_view target) {
  if (target.empty()) throw Error(Errc::InvariantViolation, "empty scoring target");
  json request = {
      {"prompt", std::string(prompt) + std::string(target)},
      {"max_tokens", 0},
      {"temperature", 0.0},
      {"logprobs", true},
      {"echo", true},
      {"n", 1},
  };
  if (!impl_->options.model.empty()) request["model"] = impl_->options.model;
  auto choices = parse_completion_response(post(request));
  if (choices.empty() || choices.front().tokens.empty())
    throw Error(Errc::Unsupported, "endpoint returned no echoed token scores");
  const Completion& c = choices.front();
  std::vector<double> out;
  std::size_t offset = 0;
  const std::size_t boundary = prompt.size();
  const std::size_t limit = prompt.size() + target.size();
  for (std::size_t i = 0; i < c.tokens.size() && offset < limit; ++i) {
    const std::size_t end = offset + c.tokens[i].size();
    if (end > boundary) {
      if (std::isnan(c.log_probs[i])) throw Error(Errc::MalformedResponse, "null score inside the target");
      out.push_back(c.log_probs[i]);
    }
    offset = end;
  }
  if (out.empty()) throw Error(Errc::Unsupported, "echoed tokens do not cover the target");
  return out;
}

}  // namespace qrefine
