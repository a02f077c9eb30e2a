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

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace qrefine {

struct Url {
  std::string scheme;  // "http" or "https"
  std::string host;
  int port = 0;
  std::string path;  // includes any query string; "/" when absent

  std::string origin() const;
};

// Throws Error{ConfigError} on anything that is not http(s)://host[:port][/path].
Url parse_url(std::string_view url);

std::string url_encode(std::string_view s);

struct HttpResponse {
  int status = 0;  // 0 when the connection failed
  std::string body;
  std::map<std::string, std::string> headers;  // keys lowercased
  std::string error;  // transport error description when status == 0
};

using HeaderList = std::vector<std::pair<std::string, std::string>>;

// Thin blocking client; each call opens its own connection, so one instance
// may be shared between threads.
class HttpClient {
 public:
  explicit HttpClient(Url base, int timeout_seconds = 60);

  HttpResponse post_json(const std::string& path, const std::string& body,
                         const HeaderList& headers = {}) const;
  HttpResponse get(const std::string& path, const HeaderList& headers = {}) const;

  const Url& base() const noexcept { return base_; }

 private:
  Url base_;
  int timeout_seconds_;
};

}  // namespace qrefine
