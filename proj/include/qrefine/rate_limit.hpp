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

#include <chrono>
#include <condition_variable>
#include <functional>
#include <mutex>

namespace qrefine {

// Token bucket: `rate` tokens per second refill up to `burst`. A rate of zero
// or less disables limiting.
class TokenBucket {
 public:
  using Clock = std::chrono::steady_clock;
  using NowFn = std::function<Clock::time_point()>;

  TokenBucket(double rate_per_second, double burst, NowFn now = &Clock::now);

  bool try_acquire();
  // Seconds until a token becomes available; 0 when one is available now.
  double wait_seconds();
  void acquire();

 private:
  void refill(Clock::time_point now);

  double rate_;
  double burst_;
  double tokens_;
  NowFn now_;
  Clock::time_point last_;
  std::mutex mutex_;
};

// Caps the number of concurrent requests to one backend.
class InFlightLimiter {
 public:
  explicit InFlightLimiter(int max_in_flight);

  class Guard {
   public:
    explicit Guard(InFlightLimiter& limiter) : limiter_(limiter) { limiter_.enter(); }
    ~Guard() { limiter_.leave(); }
    Guard(const Guard&) = delete;
    Guard& operator=(const Guard&) = delete;

   private:
    InFlightLimiter& limiter_;
  };

  int in_flight() const;

 private:
  void enter();
  void leave();

  int max_;
  int current_ = 0;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
};

}  // namespace qrefine
