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

#include <doctest.h>

#include "qrefine/errors.hpp"
#include "qrefine/text.hpp"

using namespace qrefine;

TEST_SUITE("text") {
  TEST_CASE("normalize_answer lowercases, drops punctuation and leading articles") {
    CHECK(text::normalize_answer("  The  Eiffel Tower! ") == "eiffel tower");
    CHECK(text::normalize_answer("A an the Cat") == "cat");
    CHECK(text::normalize_answer("Paris, France.") == "paris france");
    CHECK(text::normalize_answer("...") == "");
    CHECK(text::normalize_answer("theory") == "theory");
  }

  TEST_CASE("split_lines drops carriage returns and the trailing empty line") {
    auto lines = text::split_lines("a\r\nb\n\nc\n");
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "a");
    CHECK(lines[2] == "");
    CHECK(lines[3] == "c");
  }

  TEST_CASE("fnv1a64 known vectors") {
    CHECK(text::fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(text::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(text::hex64(0xabcULL) == "0000000000000abc");
  }

  TEST_CASE("error messages carry the code name") {
    Error e(Errc::UnknownToken, "bad");
    CHECK(e.code() == Errc::UnknownToken);
    CHECK(std::string(e.what()) == "UnknownToken: bad");
    RateLimitedError r("slow down", 2.5);
    CHECK(r.code() == Errc::RateLimited);
    CHECK(r.retry_after_seconds() == doctest::Approx(2.5));
  }
}
