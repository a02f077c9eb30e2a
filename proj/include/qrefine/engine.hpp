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

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "qrefine/generator.hpp"
#include "qrefine/protocol.hpp"
#include "qrefine/retrieval.hpp"

namespace qrefine {

enum class SourceKind { Bm25Corpus, EmbeddingCandidates, WebSearch };
enum class Strategy { Ppl, Confidence, Ensemble };

std::string_view source_name(SourceKind source) noexcept;
std::optional<SourceKind> source_from_name(std::string_view name) noexcept;
std::string_view strategy_name(Strategy strategy) noexcept;
std::optional<Strategy> strategy_from_name(std::string_view name) noexcept;

struct SearchConfig {
  int width = 2;
  int max_depth = 2;
  int top_k = 3;
  SourceKind source = SourceKind::WebSearch;
  Strategy strategy = Strategy::Ensemble;
  DecodeParams decode;
  TokenTable tokens;
  int workers = 1;           // sibling expansions run on this many threads
  std::size_t call_budget = 0;  // generator calls per run; 0 selects max_generator_calls()
  int retries = 0;           // extra attempts for a failing generator or retrieval call
  bool score_evidence = false;  // score inserted evidence for full-sequence perplexity

  SearchLimits limits() const {
    return {static_cast<std::size_t>(max_depth), static_cast<std::size_t>(top_k)};
  }
};

// Throws Error{InvariantViolation} for non-positive width/top_k or negative depth.
void check_config(const SearchConfig& config);

// Upper bound on generator calls for a full tree: every internal node expands
// once and every depth-limited leaf gets one forced answer call.
std::size_t max_generator_calls(int width, int max_depth);

struct TreeNode {
  Trajectory partial;
  int depth = 0;
  std::vector<TreeNode> children;
  bool terminal = false;
};

struct RunStats {
  std::size_t generator_calls = 0;
  std::size_t retrieval_calls = 0;
  std::size_t duplicates_collapsed = 0;
  std::size_t forced_answers = 0;
  std::vector<std::string> dropped;  // one diagnostic per dropped branch
};

// One generate step at a non-terminal node below max_depth. Protocol and
// retrieval failures drop the affected child (recorded in stats); generator
// failures propagate.
std::vector<TreeNode> expand(const TreeNode& node, const SearchConfig& config, Generator& generator,
                             Retriever& retriever, RunStats* stats = nullptr);

// Generates the final answer for a depth-limited leaf. The prompt ends in the
// answer token so the continuation is the answer text.
TreeNode force_answer(const TreeNode& node, const SearchConfig& config, Generator& generator,
                      RunStats* stats = nullptr);

struct SearchTree {
  TreeNode root;
  std::vector<Trajectory> trajectories;  // terminal leaves, depth-first order
  RunStats stats;
};

// Breadth-first tree decoding. Throws Error{GeneratorError} when the root
// generation fails and Error{NoTrajectory} when every branch fails.
SearchTree search(std::string_view question, const SearchConfig& config, Generator& generator,
                  Retriever& retriever);

std::vector<Trajectory> run(std::string_view question, const SearchConfig& config, Generator& generator,
                            Retriever& retriever, RunStats* stats = nullptr);

// One line of the trajectory dump.
nlohmann::json trajectory_record(const Trajectory& trajectory, std::optional<double> ppl,
                                 std::optional<double> confidence);

}  // namespace qrefine
