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

namespace qrefine {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::InvariantViolation: return "InvariantViolation";
    case Errc::UnknownToken: return "UnknownToken";
    case Errc::UnterminatedEvidence: return "UnterminatedEvidence";
    case Errc::MissingAnswer: return "MissingAnswer";
    case Errc::MalformedSequence: return "MalformedSequence";
    case Errc::EndpointUnavailable: return "EndpointUnavailable";
    case Errc::MalformedResponse: return "MalformedResponse";
    case Errc::ScriptExhausted: return "ScriptExhausted";
    case Errc::Unsupported: return "Unsupported";
    case Errc::UnknownDocument: return "UnknownDocument";
    case Errc::EmptyIndex: return "EmptyIndex";
    case Errc::EmbeddingUnavailable: return "EmbeddingUnavailable";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::SearchUnavailable: return "SearchUnavailable";
    case Errc::RateLimited: return "RateLimited";
    case Errc::ProtocolError: return "ProtocolError";
    case Errc::RetrievalError: return "RetrievalError";
    case Errc::NoTrajectory: return "NoTrajectory";
    case Errc::GeneratorError: return "GeneratorError";
    case Errc::BudgetExhausted: return "BudgetExhausted";
    case Errc::NoScoredTokens: return "NoScoredTokens";
    case Errc::EmptyAnswerSpan: return "EmptyAnswerSpan";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::UnknownSource: return "UnknownSource";
    case Errc::AnnotatorRefusal: return "AnnotatorRefusal";
    case Errc::FormatViolation: return "FormatViolation";
    case Errc::AlignmentMismatch: return "AlignmentMismatch";
    case Errc::GoldNotInChoices: return "GoldNotInChoices";
    case Errc::RaggedRows: return "RaggedRows";
    case Errc::BadUsage: return "BadUsage";
    case Errc::ConfigError: return "ConfigError";
    case Errc::RuntimeFailure: return "RuntimeFailure";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

RateLimitedError::RateLimitedError(const std::string& message, double retry_after_seconds)
    : Error(Errc::RateLimited, message), retry_after_(retry_after_seconds) {}

}  // namespace qrefine
