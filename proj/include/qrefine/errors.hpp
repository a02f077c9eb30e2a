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

#include <stdexcept>
#include <string>
#include <string_view>

namespace qrefine {

enum class Errc {
  // protocol
  InvariantViolation,
  UnknownToken,
  UnterminatedEvidence,
  MissingAnswer,
  MalformedSequence,
  // generator gateway
  EndpointUnavailable,
  MalformedResponse,
  ScriptExhausted,
  Unsupported,
  // retrieval
  UnknownDocument,
  EmptyIndex,
  EmbeddingUnavailable,
  DimensionMismatch,
  SearchUnavailable,
  RateLimited,
  // engine
  ProtocolError,
  RetrievalError,
  NoTrajectory,
  GeneratorError,
  BudgetExhausted,
  // selection
  NoScoredTokens,
  EmptyAnswerSpan,
  EmptyInput,
  // dataset builder
  UnknownSource,
  AnnotatorRefusal,
  FormatViolation,
  AlignmentMismatch,
  // evaluation
  GoldNotInChoices,
  RaggedRows,
  // app
  BadUsage,
  ConfigError,
  RuntimeFailure,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// HTTP 429 from a rate-limited backend. retry_after_seconds is negative when
// the server sent no hint.
class RateLimitedError : public Error {
 public:
  RateLimitedError(const std::string& message, double retry_after_seconds);

  double retry_after_seconds() const noexcept { return retry_after_; }

 private:
  double retry_after_;
};

}  // namespace qrefine
