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

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qrefine/protocol.hpp"

namespace qrefine {

// Which tokens perplexity ranges over. GeneratedOnly covers refined queries and
// the answer; FullSequence adds the scored evidence tokens.
enum class PplScope { GeneratedOnly, FullSequence };

// How ensemble selection accumulates confidence within an answer group.
// Probability sums exp(confidence); LogSum sums the raw log-domain values.
enum class EnsembleDomain { Probability, LogSum };

enum class GroupKey { Normalized, Raw };

struct SelectionOptions {
  PplScope ppl_scope = PplScope::GeneratedOnly;
  EnsembleDomain ensemble_domain = EnsembleDomain::Probability;
  GroupKey group_key = GroupKey::Normalized;
  // Mean instead of sum over the answer span. Off by default.
  bool confidence_per_token_mean = false;
};

struct ScoredTrajectory {
  Trajectory trajectory;
  double ppl = 1.0;
  double confidence = 0.0;
  std::string answer_norm;
};

std::string normalize_answer(std::string_view answer);

// exp(-mean log p) over the tokens in scope. Throws Error{NoScoredTokens}.
double perplexity(const Trajectory& t, PplScope scope = PplScope::GeneratedOnly);

// Sum of answer-span log-probabilities (answer_start onward). Throws
// Error{EmptyAnswerSpan}.
double confidence(const Trajectory& t, bool per_token_mean = false);

// -sum log p. Throws Error{EmptyInput}.
double sequence_nll(std::span<const double> log_probs);

ScoredTrajectory score_trajectory(Trajectory t, const SelectionOptions& options = {});

// Scores every trajectory that has scorable tokens; the rest are skipped.
std::vector<ScoredTrajectory> score_all(const std::vector<Trajectory>& trajectories,
                                        const SelectionOptions& options = {});

// Index of the minimum-perplexity trajectory; ties go to the earliest.
std::size_t select_ppl_index(std::span<const ScoredTrajectory> trajs);
const ScoredTrajectory& select_ppl(std::span<const ScoredTrajectory> trajs);

// Index of the maximum-confidence trajectory; ties go to the earliest.
std::size_t select_confidence_index(std::span<const ScoredTrajectory> trajs);
const ScoredTrajectory& select_confidence(std::span<const ScoredTrajectory> trajs);

struct EnsembleChoice {
  std::string key;             // winning group key
  std::string representative;  // raw answer of the group's first member
  double mass = 0.0;           // accumulated confidence of the group
  std::size_t first_index = 0;
  std::size_t members = 0;
};

EnsembleChoice select_ensemble_detail(std::span<const ScoredTrajectory> trajs,
                                      EnsembleDomain domain = EnsembleDomain::Probability,
                                      GroupKey key = GroupKey::Normalized);
std::string select_ensemble(std::span<const ScoredTrajectory> trajs,
                            EnsembleDomain domain = EnsembleDomain::Probability,
                            GroupKey key = GroupKey::Normalized);

using AnswerMetric = std::function<bool(std::string_view prediction, std::span<const std::string> gold)>;

// True iff the metric accepts any trajectory's final answer.
bool upper_bound(std::span<const ScoredTrajectory> trajs, std::span<const std::string> gold,
                 const AnswerMetric& metric);

}  // namespace qrefine
