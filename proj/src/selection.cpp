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

#include "qrefine/selection.hpp"

#include <cmath>
#include <map>

#include "qrefine/errors.hpp"
#include "qrefine/text.hpp"

namespace qrefine {

std::string normalize_answer(std::string_view answer) { return text::normalize_answer(answer); }

double perplexity(const Trajectory& t, PplScope scope) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& tok : t.generated_tokens) {
    sum += tok.log_prob;
    ++count;
  }
  if (scope == PplScope::FullSequence) {
    for (double lp : t.evidence_log_probs) {
      sum += lp;
      ++count;
    }
  }
  if (count == 0) throw Error(Errc::NoScoredTokens, "trajectory has no scored tokens");
  return std::exp(-sum / static_cast<double>(count));
}

double confidence(const Trajectory& t, bool per_token_mean) {
  if (t.answer_start >= t.generated_tokens.size())
    throw Error(Errc::EmptyAnswerSpan, "answer span is empty");
  double sum = 0.0;
  for (std::size_t i = t.answer_start; i < t.generated_tokens.size(); ++i) sum += t.generated_tokens[i].log_prob;
  if (per_token_mean) sum /= static_cast<double>(t.generated_tokens.size() - t.answer_start);
  return sum;
}

double sequence_nll(std::span<const double> log_probs) {
  if (log_probs.empty()) throw Error(Errc::EmptyInput, "no log-probabilities");
  double sum = 0.0;
  for (double lp : log_probs) sum += lp;
  return -sum;
}

ScoredTrajectory score_trajectory(Trajectory t, const SelectionOptions& options) {
  ScoredTrajectory s;
  s.ppl = perplexity(t, options.ppl_scope);
  s.confidence = confidence(t, options.confidence_per_token_mean);
  s.answer_norm = options.group_key == GroupKey::Normalized ? normalize_answer(t.final_answer) : t.final_answer;
  s.trajectory = std::move(t);
  return s;
}

std::vector<ScoredTrajectory> score_all(const std::vector<Trajectory>& trajectories,
                                        const SelectionOptions& options) {
  std::vector<ScoredTrajectory> out;
  out.reserve(trajectories.size());
  for (const auto& t : trajectories) {
    try {
      out.push_back(score_trajectory(t, options));
    } catch (const Error& e) {
      if (e.code() != Errc::NoScoredTokens && e.code() != Errc::EmptyAnswerSpan) throw;
    }
  }
  return out;
}

std::size_t select_ppl_index(std::span<const ScoredTrajectory> trajs) {
  if (trajs.empty()) throw Error(Errc::EmptyInput, "no trajectories to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < trajs.size(); ++i) {
    if (trajs[i].ppl < trajs[best].ppl) best = i;
  }
  return best;
}

const ScoredTrajectory& select_ppl(std::span<const ScoredTrajectory> trajs) {
  return trajs[select_ppl_index(trajs)];
}

std::size_t select_confidence_index(std::span<const ScoredTrajectory> trajs) {
  if (trajs.empty()) throw Error(Errc::EmptyInput, "no trajectories to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < trajs.size(); ++i) {
    if (trajs[i].confidence > trajs[best].confidence) best = i;
  }
  return best;
}

const ScoredTrajectory& select_confidence(std::span<const ScoredTrajectory> trajs) {
  return trajs[select_confidence_index(trajs)];
}

EnsembleChoice select_ensemble_detail(std::span<const ScoredTrajectory> trajs, EnsembleDomain domain,
                                      GroupKey key) {
  if (trajs.empty()) throw Error(Errc::EmptyInput, "no trajectories to select from");
  // Groups kept in first-occurrence order so ties resolve to the earliest.
  std::vector<EnsembleChoice> groups;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    const auto& t = trajs[i];
    std::string k = key == GroupKey::Normalized ? normalize_answer(t.trajectory.final_answer)
                                                : t.trajectory.final_answer;
    auto [it, inserted] = index.emplace(k, groups.size());
    if (inserted) groups.push_back(EnsembleChoice{k, t.trajectory.final_answer, 0.0, i, 0});
    auto& g = groups[it->second];
    g.mass += domain == EnsembleDomain::Probability ? std::exp(t.confidence) : t.confidence;
    ++g.members;
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < groups.size(); ++g) {
    if (groups[g].mass > groups[best].mass) best = g;
  }
  return groups[best];
}

std::string select_ensemble(std::span<const ScoredTrajectory> trajs, EnsembleDomain domain, GroupKey key) {
  return select_ensemble_detail(trajs, domain, key).key;
}

bool upper_bound(std::span<const ScoredTrajectory> trajs, std::span<const std::string> gold,
                 const AnswerMetric& metric) {
  if (gold.empty()) throw Error(Errc::EmptyInput, "no gold answers");
  for (const auto& t : trajs) {
    if (metric(t.trajectory.final_answer, gold)) return true;
  }
  return false;
}

}  // namespace qrefine
