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

#include "qrefine/rate_limit.hpp"

#include <algorithm>
#include <thread>

namespace qrefine {

TokenBucket::TokenBucket(double rate_per_second, double burst, NowFn now)
    : rate_(rate_per_second), burst_(std::max(1.0, burst)), tokens_(burst_), now_(std::move(now)),
      last_(now_()) {}

void TokenBucket::refill(Clock::time_point now) {
  const double elapsed = std::chrono::duration<double>(now - last_).count();
  if (elapsed > 0) {
    tokens_ = std::min(burst_, tokens_ + elapsed * rate_);
    last_ = now;
  }
}

bool TokenBucket::try_acquire() {
  if (rate_ <= 0) return true;
  std::lock_guard lock(mutex_);
  refill(now_());
  if (tokens_ >= 1.0) {
    tokens_ -= 1.0;
    return true;
  }
  return false;
}

double TokenBucket::wait_seconds() {
  if (rate_ <= 0) return 0.0;
  std::lock_guard lock(mutex_);
  refill(now_());
  return tokens_ >= 1.0 ? 0.0 : (1.0 - tokens_) / rate_;
}

void TokenBucket::acquire() {
  while (!try_acquire()) {
    std::this_thread::sleep_for(std::chrono::duration<double>(std::max(wait_seconds(), 1e-3)));
  }
}

InFlightLimiter::InFlightLimiter(int max_in_flight) : max_(std::max(1, max_in_flight)) {}

int InFlightLimiter::in_flight() const {
  std::lock_guard lock(mutex_);
  return current_;
}

void InFlightLimiter::enter() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [this] { return current_ < max_; });
  ++current_;
}

void InFlightLimiter::leave() {
  {
    std::lock_guard lock(mutex_);
    --current_;
  }
  cv_.notify_one();
}

}  // namespace qrefine
