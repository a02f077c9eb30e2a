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

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace qrefine::text {

std::string_view trim(std::string_view s) noexcept;
std::string to_lower(std::string_view s);
bool starts_with_icase(std::string_view s, std::string_view prefix) noexcept;

// Splits on '\n', dropping a trailing '\r' from each line. A trailing newline
// does not produce an empty final line.
std::vector<std::string> split_lines(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);

// Answer normalization shared by ensemble grouping and the QA metrics:
// lowercase, punctuation removed, leading articles removed, whitespace
// collapsed.
std::string normalize_answer(std::string_view s);

// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::uint64_t fnv1a64(std::string_view s) noexcept;
std::string hex64(std::uint64_t value);

}  // namespace qrefine::text
