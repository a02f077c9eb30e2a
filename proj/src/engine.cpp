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

#include "qrefine/engine.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <thread>

#include <spdlog/spdlog.h>

#include "qrefine/errors.hpp"
#include "qrefine/parallel.hpp"

namespace qrefine {

std::string_view source_name(SourceKind source) noexcept {
  switch (source) {
    case SourceKind::Bm25Corpus: return "bm25";
    case SourceKind::EmbeddingCandidates: return "embedding";
    case SourceKind::WebSearch: return "web";
  }
  return "web";
}

std::optional<SourceKind> source_from_name(std::string_view name) noexcept {
  if (name == "bm25") return SourceKind::Bm25Corpus;
  if (name == "embedding") return SourceKind::EmbeddingCandidates;
  if (name == "web") return SourceKind::WebSearch;
  return std::nullopt;
}

std::string_view strategy_name(Strategy strategy) noexcept {
  switch (strategy) {
    case Strategy::Ppl: return "ppl";
    case Strategy::Confidence: return "confidence";
    case Strategy::Ensemble: return "ensemble";
  }
  return "ensemble";
}

std::optional<Strategy> strategy_from_name(std::string_view name) noexcept {
  if (name == "ppl") return Strategy::Ppl;
  if (name == "confidence") return Strategy::Confidence;
  if (name == "ensemble") return Strategy::Ensemble;
  return std::nullopt;
}

void check_config(const SearchConfig& config) {
  if (config.width < 1) throw Error(Errc::InvariantViolation, "width must be >= 1");
  if (config.max_depth < 0) throw Error(Errc::InvariantViolation, "max_depth must be >= 0");
  if (config.top_k < 1) throw Error(Errc::InvariantViolation, "top_k must be >= 1");
  if (config.decode.max_tokens < 1) throw Error(Errc::InvariantViolation, "max_tokens must be >= 1");
  if (config.retries < 0) throw Error(Errc::InvariantViolation, "retries must be >= 0");
  if (auto problem = config.tokens.check(); !problem.empty()) throw Error(Errc::InvariantViolation, problem);
}

std::size_t max_generator_calls(int width, int max_depth) {
  std::size_t level = 1;
  std::size_t internal = 0;
  for (int d = 0; d < max_depth; ++d) {
    internal += level;
    level *= static_cast<std::size_t>(width);
  }
  return internal + level;
}

namespace {

template <typename Fn>
auto with_retries(int retries, Fn&& fn) -> decltype(fn()) {
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const Error&) {
      if (attempt >= retries) throw;
    }
  }
}

std::size_t token_covering(const std::vector<std::string>& tokens, std::size_t offset) {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    pos += tokens[i].size();
    if (pos > offset) return i;
  }
  return tokens.size();
}

void append_tokens(Trajectory& t, const Completion& c) {
  for (std::size_t i = 0; i < c.tokens.size(); ++i) {
    const double lp = i < c.log_probs.size() ? c.log_probs[i] : 0.0;
    t.generated_tokens.push_back({c.tokens[i], lp});
  }
}

DecodeParams continuation_params(const SearchConfig& config, bool forced) {
  DecodeParams params = config.decode;
  params.want_log_probs = true;
  auto add_stop = [&](const std::string& s) {
    if (std::find(params.stop_sequences.begin(), params.stop_sequences.end(), s) == params.stop_sequences.end())
      params.stop_sequences.push_back(s);
  };
  if (!forced) add_stop(config.tokens.evidence_open);
  add_stop(config.tokens.end);
  return params;
}

std::string describe(const Trajectory& t) {
  std::string path = "root";
  for (const auto& s : t.steps) path += " > " + std::string(action_name(s.action)) + "(" + s.query + ")";
  return path;
}

}  // namespace

std::vector<TreeNode> expand(const TreeNode& node, const SearchConfig& config, Generator& generator,
                             Retriever& retriever, RunStats* stats) {
  if (node.terminal) throw Error(Errc::InvariantViolation, "cannot expand a terminal node");
  if (node.depth >= config.max_depth) throw Error(Errc::InvariantViolation, "node is at max depth");
  RunStats local;
  RunStats& st = stats != nullptr ? *stats : local;

  const std::string prompt = render_prefix(node.partial, config.tokens);
  const DecodeParams params = continuation_params(config, false);
  ++st.generator_calls;
  const auto completions = with_retries(config.retries, [&] {
    return generator.complete_many(prompt, params, config.width);
  });

  std::vector<TreeNode> children;
  std::vector<std::string> seen;
  for (const auto& c : completions) {
    if (std::find(seen.begin(), seen.end(), c.text) != seen.end()) {
      ++st.duplicates_collapsed;
      continue;
    }
    seen.push_back(c.text);

    Continuation cont;
    try {
      cont = parse_continuation(c.text, config.tokens);
    } catch (const Error& e) {
      st.dropped.push_back(describe(node.partial) + ": " + e.what());
      spdlog::debug("dropping branch: {}", st.dropped.back());
      continue;
    }

    TreeNode child;
    child.partial = node.partial;
    const std::size_t base = child.partial.generated_tokens.size();
    append_tokens(child.partial, c);

    if (cont.action == ActionKind::Answer) {
      child.partial.final_answer = std::move(cont.payload);
      child.partial.answer_start = base + token_covering(c.tokens, cont.payload_offset);
      child.depth = node.depth;
      child.terminal = true;
      children.push_back(std::move(child));
      continue;
    }

    SearchStep step;
    step.turn = node.depth + 1;
    step.action = cont.action;
    step.query = std::move(cont.payload);
    try {
      ++st.retrieval_calls;
      step.documents = with_retries(config.retries, [&] { return retriever.retrieve(step.query, config.top_k); });
    } catch (const Error& e) {
      st.dropped.push_back(describe(node.partial) + " > " + std::string(action_name(step.action)) + "(" +
                           step.query + "): " + Error(Errc::RetrievalError, e.what()).what());
      spdlog::debug("dropping branch: {}", st.dropped.back());
      continue;
    }
    if (step.documents.size() > static_cast<std::size_t>(config.top_k))
      step.documents.resize(static_cast<std::size_t>(config.top_k));
    for (std::size_t i = 0; i < step.documents.size(); ++i) step.documents[i].rank = static_cast<int>(i) + 1;

    if (config.score_evidence) {
      Trajectory header = node.partial;
      header.steps.push_back(SearchStep{step.turn, step.action, step.query, {}});
      std::string context = render_prefix(header, config.tokens);
      context.resize(context.size() - render_evidence({}, config.tokens).size());
      try {
        const auto lps = generator.score_continuation(context, render_evidence(step.documents, config.tokens));
        child.partial.evidence_log_probs.insert(child.partial.evidence_log_probs.end(), lps.begin(), lps.end());
      } catch (const Error& e) {
        st.dropped.push_back(describe(node.partial) + ": evidence scoring failed: " + e.what());
        continue;
      }
    }

    child.partial.steps.push_back(std::move(step));
    child.depth = node.depth + 1;
    children.push_back(std::move(child));
  }
  return children;
}

TreeNode force_answer(const TreeNode& node, const SearchConfig& config, Generator& generator, RunStats* stats) {
  if (node.terminal) throw Error(Errc::InvariantViolation, "node already answered");
  RunStats local;
  RunStats& st = stats != nullptr ? *stats : local;
  const std::string prompt = render_prefix(node.partial, config.tokens) + config.tokens.answer + " ";
  ++st.generator_calls;
  ++st.forced_answers;
  const Completion c = with_retries(config.retries, [&] {
    return generator.complete(prompt, continuation_params(config, true));
  });
  const Continuation cont = parse_forced_answer(c.text, config.tokens);
  TreeNode leaf;
  leaf.partial = node.partial;
  const std::size_t base = leaf.partial.generated_tokens.size();
  append_tokens(leaf.partial, c);
  leaf.partial.final_answer = cont.payload;
  leaf.partial.answer_start = base + token_covering(c.tokens, cont.payload_offset);
  leaf.depth = node.depth;
  leaf.terminal = true;
  return leaf;
}

namespace {

struct Outcome {
  std::vector<TreeNode> children;
  RunStats stats;
  std::optional<std::string> failure;
  std::exception_ptr fatal;
};

void merge(RunStats& into, RunStats&& from) {
  into.generator_calls += from.generator_calls;
  into.retrieval_calls += from.retrieval_calls;
  into.duplicates_collapsed += from.duplicates_collapsed;
  into.forced_answers += from.forced_answers;
  for (auto& d : from.dropped) into.dropped.push_back(std::move(d));
}

void collect(const TreeNode& node, std::vector<Trajectory>& out) {
  if (node.terminal) {
    out.push_back(node.partial);
    return;
  }
  for (const auto& child : node.children) collect(child, out);
}

}  // namespace

SearchTree search(std::string_view question, const SearchConfig& config, Generator& generator,
                  Retriever& retriever) {
  check_config(config);
  if (question.empty()) throw Error(Errc::InvariantViolation, "empty question");

  SerializedGenerator serialized(generator);
  Generator& gen = generator.concurrent_safe() ? generator : static_cast<Generator&>(serialized);

  SearchTree tree;
  tree.root.partial.input = std::string(question);
  const std::size_t budget =
      config.call_budget > 0 ? config.call_budget : max_generator_calls(config.width, config.max_depth);
  std::size_t reserved = 0;

  std::vector<TreeNode*> frontier{&tree.root};
  while (!frontier.empty()) {
    std::vector<bool> granted(frontier.size());
    for (std::size_t i = 0; i < frontier.size(); ++i) {
      granted[i] = reserved < budget;
      if (granted[i]) ++reserved;
    }

    std::vector<Outcome> outcomes(frontier.size());
    run_parallel(frontier.size(), config.workers, [&](std::size_t i) {
      const TreeNode& node = *frontier[i];
      Outcome& out = outcomes[i];
      if (!granted[i]) {
        out.failure = describe(node.partial) + ": " + Error(Errc::BudgetExhausted, "generator call budget spent").what();
        return;
      }
      const bool is_root = &node == &tree.root;
      try {
        if (node.depth < config.max_depth) {
          out.children = expand(node, config, gen, retriever, &out.stats);
        } else {
          out.children.push_back(force_answer(node, config, gen, &out.stats));
        }
      } catch (const Error& e) {
        const bool protocol = e.code() == Errc::ProtocolError;
        if (is_root && !protocol) {
          out.fatal = std::make_exception_ptr(Error(Errc::GeneratorError, e.what()));
        } else {
          out.failure = describe(node.partial) + ": " + e.what();
        }
      } catch (...) {
        out.fatal = std::current_exception();
      }
    });

    std::vector<TreeNode*> next;
    for (std::size_t i = 0; i < frontier.size(); ++i) {
      Outcome& out = outcomes[i];
      if (out.fatal) std::rethrow_exception(out.fatal);
      merge(tree.stats, std::move(out.stats));
      if (out.failure) {
        spdlog::debug("dropping branch: {}", *out.failure);
        tree.stats.dropped.push_back(std::move(*out.failure));
      }
      frontier[i]->children = std::move(out.children);
    }
    for (TreeNode* node : frontier) {
      for (auto& child : node->children) {
        if (!child.terminal) next.push_back(&child);
      }
    }
    frontier = std::move(next);
  }

  std::vector<Trajectory> leaves;
  collect(tree.root, leaves);
  for (auto& t : leaves) {
    auto violations = validate(t, config.limits());
    if (violations.empty()) {
      tree.trajectories.push_back(std::move(t));
    } else {
      tree.stats.dropped.push_back(describe(t) + ": invalid trajectory: " + violations.front());
    }
  }
  if (tree.trajectories.empty())
    throw Error(Errc::NoTrajectory, "every branch failed (" + std::to_string(tree.stats.dropped.size()) + " dropped)");
  return tree;
}

std::vector<Trajectory> run(std::string_view question, const SearchConfig& config, Generator& generator,
                            Retriever& retriever, RunStats* stats) {
  SearchTree tree = search(question, config, generator, retriever);
  if (stats != nullptr) *stats = std::move(tree.stats);
  return std::move(tree.trajectories);
}

nlohmann::json trajectory_record(const Trajectory& t, std::optional<double> ppl, std::optional<double> confidence) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : t.steps) {
    nlohmann::json docs = nlohmann::json::array();
    for (const auto& d : s.documents) {
      docs.push_back({{"title", d.title}, {"snippet", d.snippet}, {"locator", d.locator}, {"rank", d.rank},
                      {"score", d.score}});
    }
    steps.push_back({{"action", action_name(s.action)}, {"query", s.query}, {"documents", std::move(docs)}});
  }
  nlohmann::json record = {{"question", t.input}, {"steps", std::move(steps)}, {"answer", t.final_answer}};
  record["ppl"] = ppl ? nlohmann::json(*ppl) : nlohmann::json(nullptr);
  record["confidence"] = confidence ? nlohmann::json(*confidence) : nlohmann::json(nullptr);
  return record;
}

}  // namespace qrefine
