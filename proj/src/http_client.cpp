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

#include "qrefine/http_client.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cctype>
#include <charconv>

#include "qrefine/errors.hpp"
#include "qrefine/text.hpp"

namespace qrefine {

std::string Url::origin() const {
  return scheme + "://" + host + ":" + std::to_string(port);
}

Url parse_url(std::string_view url) {
  Url out;
  const std::size_t sep = url.find("://");
  if (sep == std::string_view::npos) throw Error(Errc::ConfigError, "URL without scheme: " + std::string(url));
  out.scheme = text::to_lower(url.substr(0, sep));
  if (out.scheme != "http" && out.scheme != "https")
    throw Error(Errc::ConfigError, "unsupported URL scheme: " + out.scheme);
  std::string_view rest = url.substr(sep + 3);
  const std::size_t slash = rest.find('/');
  std::string_view authority = rest.substr(0, slash);
  out.path = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
  const std::size_t colon = authority.rfind(':');
  if (colon != std::string_view::npos) {
    std::string_view port = authority.substr(colon + 1);
    auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), out.port);
    if (ec != std::errc{} || ptr != port.data() + port.size() || out.port <= 0 || out.port > 65535)
      throw Error(Errc::ConfigError, "bad port in URL: " + std::string(url));
    authority = authority.substr(0, colon);
  } else {
    out.port = out.scheme == "https" ? 443 : 80;
  }
  if (authority.empty()) throw Error(Errc::ConfigError, "URL without host: " + std::string(url));
  out.host = std::string(authority);
  return out;
}

std::string url_encode(std::string_view s) {
  static constexpr char kHex[] = "0123456789ABCDEF";
  std::string out;
  out.reserve(s.size() * 3);
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(kHex[c >> 4]);
      out.push_back(kHex[c & 15]);
    }
  }
  return out;
}

namespace {

HttpResponse convert(const httplib::Result& result) {
  HttpResponse out;
  if (!result) {
    out.error = httplib::to_string(result.error());
    return out;
  }
  out.status = result->status;
  out.body = result->body;
  for (const auto& [key, value] : result->headers) out.headers[text::to_lower(key)] = value;
  return out;
}

httplib::Headers to_headers(const HeaderList& headers) {
  httplib::Headers out;
  for (const auto& [k, v] : headers) out.emplace(k, v);
  return out;
}

}  // namespace

HttpClient::HttpClient(Url base, int timeout_seconds)
    : base_(std::move(base)), timeout_seconds_(timeout_seconds) {}

HttpResponse HttpClient::post_json(const std::string& path, const std::string& body,
                                   const HeaderList& headers) const {
  httplib::Client client(base_.origin());
  client.set_connection_timeout(timeout_seconds_);
  client.set_read_timeout(timeout_seconds_);
  return convert(client.Post(path, to_headers(headers), body, "application/json"));
}

HttpResponse HttpClient::get(const std::string& path, const HeaderList& headers) const {
  httplib::Client client(base_.origin());
  client.set_connection_timeout(timeout_seconds_);
  client.set_read_timeout(timeout_seconds_);
  return convert(client.Get(path, to_headers(headers)));
}

}  // namespace qrefine
