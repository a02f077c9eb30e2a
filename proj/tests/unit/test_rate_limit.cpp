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

#include <atomic>
#include <thread>
#include <vector>

#include "qrefine/rate_limit.hpp"

using namespace qrefine;
using namespace std::chrono_literals;

TEST_SUITE("rate_limit") {
  TEST_CASE("token bucket refills at the configured rate") {
    auto now = TokenBucket::Clock::time_point{};
    TokenBucket bucket(2.0, 2.0, [&] { return now; });
    CHECK(bucket.try_acquire());
    CHECK(bucket.try_acquire());
    CHECK_FALSE(bucket.try_acquire());
    CHECK(bucket.wait_seconds() == doctest::Approx(0.5));
    now += 250ms;
    CHECK_FALSE(bucket.try_acquire());
    CHECK(bucket.wait_seconds() == doctest::Approx(0.25));
    now += 250ms;
    CHECK(bucket.try_acquire());
    now += 10s;
    CHECK(bucket.try_acquire());
    CHECK(bucket.try_acquire());
    CHECK_FALSE(bucket.try_acquire());
  }

  TEST_CASE("zero rate disables limiting") {
    TokenBucket bucket(0.0, 1.0);
    for (int i = 0; i < 100; ++i) CHECK(bucket.try_acquire());
    CHECK(bucket.wait_seconds() == 0.0);
  }

  TEST_CASE("in-flight limiter caps concurrency") {
    InFlightLimiter limiter(2);
    std::atomic<int> peak{0};
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) {
      threads.emplace_back([&] {
        InFlightLimiter::Guard guard(limiter);
        const int now = limiter.in_flight();
        int seen = peak.load();
        while (now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(5ms);
      });
    }
    for (auto& t : threads) t.join();
    CHECK(peak.load() <= 2);
    CHECK(peak.load() >= 1);
    CHECK(limiter.in_flight() == 0);
  }
}
