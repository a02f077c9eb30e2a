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

#include "qrefine/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "qrefine/errors.hpp"
#include "qrefine/parallel.hpp"
#include "qrefine/text.hpp"

namespace qrefine {

std::string_view category_name(Category c) noexcept {
  switch (c) {
    case Category::MultiTurn: return "multi_turn";
    case Category::MultiHop: return "multi_hop";
    case Category::Ambiguous: return "ambiguous";
  }
  return "multi_turn";
}

std::optional<Category> category_from_name(std::string_view name) noexcept {
  if (name == "multi_turn") return Category::MultiTurn;
  if (name == "multi_hop") return Category::MultiHop;
  if (name == "ambiguous") return Category::Ambiguous;
  return std::nullopt;
}

std::string_view provenance_name(AnswerProvenance p) noexcept {
  return p == AnswerProvenance::Regenerated ? "regenerated" : "original_retained";
}

// ---------------------------------------------------------------------------
// Sources

SourceMap SourceMap::defaults() {
  SourceMap m;
  for (const char* s : {"arc_easy", "arc_challenge", "openbookqa"}) m.categories[s] = Category::MultiTurn;
  for (const char* s : {"hotpotqa", "musique"}) m.categories[s] = Category::MultiHop;
  m.categories["asqa"] = Category::Ambiguous;
  for (const char* s : {"lima", "wizardlm", "open_orca", "openassistant", "gpt4_alpaca"}) m.passthrough.insert(s);
  return m;
}

std::string SourceMap::key(std::string_view source) {
  std::string k = text::to_lower(text::trim(source));
  std::replace(k.begin(), k.end(), '-', '_');
  return k;
}

bool SourceMap::is_passthrough(std::string_view source) const { return passthrough.count(key(source)) > 0; }

Category classify(const RawInstance& raw, const SourceMap& sources) {
  if (raw.category) return *raw.category;
  const std::string k = SourceMap::key(raw.source);
  if (k.empty()) throw Error(Errc::UnknownSource, "instance " + raw.id + " has no source tag");
  auto it = sources.categories.find(k);
  if (it == sources.categories.end()) throw Error(Errc::UnknownSource, "unmapped source '" + raw.source + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Templates

namespace {

constexpr const char* kMultiTurnTemplate =
    R"(In a multi-turn dialogue scenario, your task is to determine whether it is necessary to use a search engine to answer a user's query and provide a list of possible search queries.

Consider the following two scenarios:

Non-Informational Replies: Sometimes, users may respond with statements or expressions that do not require information retrieval, such as "thank you" or "okay." In these cases, assess whether a search engine query is necessary.

Ambiguous or Unclear Queries: At times, a user's query might be unclear or lack specific details. Your role is to recognize the user's intent and rewrite the query to make it clearer and more precise, facilitating an effective search engine query.

Previously Answered Queries: Check if the current query or a similar one has been previously asked and answered in the conversation history. If relevant information or evidences have already been provided, acknowledge this and avoid repeating the search.

Based on the above 3 scenarios, please reply with the following format strictly:

For the case that do not need to query the search engine, output as follows:

{In context examples}

---

As outlined, it is necessary to output Retrieval Necessity first, and the output should be one of the "yes" and "no" and the query for the search engine should be split by a line break.
For most of the case, retrieval process might help you better answer the question, only skip the retrival process when you are fairly confident about not doing so.

Now, please answer:

Conversation History:

{Conversation History}

Current User's Query:

{Current User's Query}

Response For Retrieval Necessity:
)";

constexpr const char* kDecomposeTemplate =
    R"(Your task is to effectively decompose complex, multihop questions into simpler, manageable sub-questions or tasks. This process involves breaking down a question that requires information from multiple sources or steps into smaller, more direct questions that can be answered individually.

Here's how you should approach this:

Analyze the Question: Carefully read the multihop question to understand its different components. Identify what specific pieces of information are needed to answer the main question.

Here are an example of how you should solve the task:

{In context examples}

---

As outlined, please format your answer as multiple lines of text. Ensure that each subsequent question follows from the previous one and is self-contained and be capable of being answered on its own.
Ensure there is exactly one line break between each line.

Now please answer:

Provided Contexts:

{Provided Contexts}

Multihop Question:

{Multihop Question}

Decomposed queries:
)";

constexpr const char* kDisambiguateTemplate =
    R"(Your task is to identify and resolve ambiguity in complex questions, ensuring they are clear and unambiguous. This requires pinpointing elements of the question that could be interpreted in more than one way and refining the question to ensure a single, clear interpretation.

Approach this task as follows:

Analyze the Question: Read the question thoroughly to identify ambiguous parts. Consider the different ways the question could be interpreted based on its current wording.

Clarify the Query: Reformulate the question to eliminate ambiguity. This may involve specifying details, narrowing down broad terms, or providing additional context to guide the interpretation.

Here's an example of how to complete the task:

For example:

{In context examples}

---

As outlined, please format your answer as multiple lines of text.
Ensure there is exactly one line break between each line.

Now, please answer:

Original Question:

{Original Question}

Disambiguated Query:
)";

constexpr const char* kRegenerateTemplate =
    R"(Answer the question using the retrieved contexts below. If the contexts are empty, answer from your own knowledge. Reply with the answer only.

Contexts:

{Contexts}

Question:

{Question}

Answer:
)";

// Repository exemplars (not taken from any published prompt).
constexpr const char* kMultiTurnExamples = R"(Conversation History:
User: Hi there!
Assistant: Hello! How can I help you today?

Current User's Query:
Thanks, that is all.

Response For Retrieval Necessity:
no

Conversation History:
User: Who wrote The Old Man and the Sea?
Assistant: Ernest Hemingway wrote it.

Current User's Query:
When did he get the Nobel prize?

Response For Retrieval Necessity:
yes
When did Ernest Hemingway receive the Nobel Prize in Literature?)";

constexpr const char* kDecomposeExamples = R"(Multihop Question:
Which river flows through the capital of the country where the Eiffel Tower stands?

Decomposed queries:
In which country is the Eiffel Tower located?
What is the capital of France?
Which river flows through Paris?)";

constexpr const char* kDisambiguateExamples = R"(Original Question:
When did the Giants win the World Series?

Disambiguated Query:
In which years did the San Francisco Giants baseball team win the World Series?)";

}  // namespace

Templates Templates::defaults() {
  return Templates{kMultiTurnTemplate,  kDecomposeTemplate, kDisambiguateTemplate, kRegenerateTemplate,
                   kMultiTurnExamples,  kDecomposeExamples, kDisambiguateExamples};
}

std::string fill_template(std::string_view tmpl, const std::vector<std::pair<std::string, std::string>>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& [name, value] : values) {
        const std::string ph = "{" + name + "}";
        if (tmpl.substr(i, ph.size()) == ph) {
          out += value;
          i += ph.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += tmpl[i++];
  }
  return out;
}

std::pair<std::string, std::string> split_conversation(std::string_view x_origin) {
  const auto lines = text::split_lines(x_origin);
  std::size_t last_user = lines.size();
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (text::starts_with_icase(text::trim(lines[i]), "user:")) last_user = i;
  }
  if (last_user == lines.size()) return {"", std::string(text::trim(x_origin))};
  std::string history;
  for (std::size_t i = 0; i < last_user; ++i) {
    if (!history.empty()) history += '\n';
    history += lines[i];
  }
  std::string query(text::trim(text::trim(lines[last_user]).substr(5)));
  for (std::size_t i = last_user + 1; i < lines.size(); ++i) {
    query += '\n';
    query += lines[i];
  }
  return {std::string(text::trim(history)), std::string(text::trim(query))};
}

// ---------------------------------------------------------------------------
// Annotation

namespace {

std::string format_candidates(const std::vector<Document>& docs) {
  if (docs.empty()) return "(none)";
  std::string out;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (i) out += '\n';
    out += "[" + std::to_string(i + 1) + "] ";
    if (!docs[i].title.empty()) out += docs[i].title + ": ";
    out += docs[i].snippet;
  }
  return out;
}

bool is_refusal(std::string_view reply) {
  static const char* const kPatterns[] = {"i'm sorry",  "i am sorry", "sorry,",      "i cannot",   "i can't",
                                          "i can not",  "as an ai",   "i apologize", "i'm unable", "i am unable",
                                          "i won't",    "i will not"};
  const std::string lower = text::to_lower(text::trim(reply));
  return std::any_of(std::begin(kPatterns), std::end(kPatterns),
                     [&](const char* p) { return lower.rfind(p, 0) == 0; });
}

// Strips "1. ", "2) ", "- ", "* " and similar list markers.
std::string_view strip_list_marker(std::string_view line) {
  line = text::trim(line);
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i < line.size() && (line[i] == '.' || line[i] == ')') && i + 1 < line.size() && line[i + 1] == ' ')
    return text::trim(line.substr(i + 2));
  if (line.size() > 2 && (line[0] == '-' || line[0] == '*') && line[1] == ' ') return text::trim(line.substr(2));
  return line;
}

bool is_label(std::string_view line, std::initializer_list<std::string_view> labels) {
  std::string lower = text::to_lower(text::trim(line));
  if (!lower.empty() && lower.back() == ':') lower.pop_back();
  return std::any_of(labels.begin(), labels.end(), [&](std::string_view l) { return lower == l; });
}

std::optional<bool> parse_yes_no(std::string_view s) {
  std::string w = text::to_lower(text::trim(s));
  while (!w.empty() && std::ispunct(static_cast<unsigned char>(w.back()))) w.pop_back();
  if (w == "yes") return true;
  if (w == "no") return false;
  return std::nullopt;
}

DecodeParams annotator_params(const BuildConfig& config) {
  DecodeParams p;
  p.max_tokens = config.max_tokens;
  p.temperature = 0.0;
  p.want_log_probs = false;
  return p;
}

}  // namespace

std::string annotation_prompt(const RawInstance& raw, Category category, const BuildConfig& config) {
  const Templates& t = config.templates;
  switch (category) {
    case Category::MultiTurn: {
      auto [history, query] = split_conversation(raw.x_origin);
      return fill_template(t.multi_turn, {{"In context examples", t.multi_turn_examples},
                                          {"Conversation History", history.empty() ? "(none)" : history},
                                          {"Current User's Query", query}});
    }
    case Category::MultiHop:
      return fill_template(t.decompose, {{"In context examples", t.decompose_examples},
                                         {"Provided Contexts", format_candidates(raw.candidates)},
                                         {"Multihop Question", std::string(text::trim(raw.x_origin))}});
    case Category::Ambiguous:
      return fill_template(t.disambiguate, {{"In context examples", t.disambiguate_examples},
                                            {"Original Question", std::string(text::trim(raw.x_origin))}});
  }
  return {};
}

Refinements parse_refinement_reply(Category category, std::string_view reply, int max_turns,
                                   std::string_view current_query) {
  if (is_refusal(reply)) throw Error(Errc::AnnotatorRefusal, "annotator declined the request");
  const std::string_view body = text::trim(reply);
  if (body.empty()) throw Error(Errc::FormatViolation, "empty annotator reply");

  auto lines = text::split_lines(body);
  Refinements out;
  std::size_t i = 0;

  if (category == Category::MultiTurn) {
    // First content line carries yes/no, optionally after a "Retrieval Necessity:" label.
    std::string_view first = text::trim(lines[0]);
    std::string_view verdict = first;
    for (std::string_view label : {"response for retrieval necessity:", "retrieval necessity:"}) {
      if (text::starts_with_icase(first, label)) verdict = text::trim(first.substr(label.size()));
    }
    i = 1;
    if (verdict.empty() && lines.size() > 1) verdict = text::trim(lines[i++]);
    auto yn = parse_yes_no(verdict);
    if (!yn) throw Error(Errc::FormatViolation, "expected yes/no, got '" + std::string(first) + "'");
    out.retrieval_needed = *yn;
    if (!*yn) return out;
  }

  const ActionKind action = category == Category::MultiTurn  ? ActionKind::Rewrite
                            : category == Category::MultiHop ? ActionKind::Decompose
                                                             : ActionKind::Disambiguate;
  for (; i < lines.size(); ++i) {
    std::string_view line = text::trim(lines[i]);
    if (line.empty()) {
      if (category == Category::MultiTurn) continue;
      throw Error(Errc::FormatViolation, "blank line between queries");
    }
    if (is_label(line, {"query for search engine", "search queries", "queries", "decomposed queries",
                        "disambiguated query", "disambiguated queries"}))
      continue;
    if (line.back() == ':') throw Error(Errc::FormatViolation, "unexpected preamble '" + std::string(line) + "'");
    std::string_view q = strip_list_marker(line);
    if (q.empty()) continue;
    out.queries.emplace_back(action, std::string(q));
  }

  if (out.queries.empty()) {
    if (category != Category::MultiTurn) throw Error(Errc::FormatViolation, "no queries in annotator reply");
    out.queries.emplace_back(ActionKind::Rewrite, std::string(text::trim(current_query)));
  }
  if (max_turns > 0 && out.queries.size() > static_cast<std::size_t>(max_turns))
    out.queries.resize(static_cast<std::size_t>(max_turns));
  return out;
}

Refinements annotate_refinements(const RawInstance& raw, Category category, Generator& annotator,
                                 const BuildConfig& config) {
  const std::string prompt = annotation_prompt(raw, category, config);
  const Completion c = annotator.complete(prompt, annotator_params(config));
  const int max_turns = category == Category::MultiHop ? config.max_turns_multi_hop : config.max_turns_other;
  const std::string current =
      category == Category::MultiTurn ? split_conversation(raw.x_origin).second : raw.x_origin;
  return parse_refinement_reply(category, c.text, max_turns, current);
}

std::string regeneration_prompt(const RawInstance& raw, const std::vector<SearchStep>& steps,
                                const BuildConfig& config) {
  std::string contexts;
  std::size_t n = 0;
  for (const auto& step : steps) {
    for (const auto& d : step.documents) {
      if (!contexts.empty()) contexts += "\n\n";
      contexts += "[" + std::to_string(++n) + "] Title: " + d.title + "\n" + d.snippet;
    }
  }
  return fill_template(config.templates.regenerate,
                       {{"Contexts", contexts}, {"Question", std::string(text::trim(raw.x_origin))}});
}

std::string regenerate_answer(const RawInstance& raw, const std::vector<SearchStep>& steps, Generator& annotator,
                              const BuildConfig& config) {
  const Completion c = annotator.complete(regeneration_prompt(raw, steps, config), annotator_params(config));
  if (is_refusal(c.text)) throw Error(Errc::AnnotatorRefusal, "annotator declined to answer");
  std::string answer(text::trim(c.text));
  if (answer.empty()) throw Error(Errc::FormatViolation, "empty regenerated answer");
  return answer;
}

// ---------------------------------------------------------------------------
// Build

Trajectory to_trajectory(const AugmentedInstance& instance) {
  Trajectory t;
  t.input = instance.raw.x_origin;
  t.steps = instance.steps;
  t.final_answer = instance.y_new;
  return t;
}

namespace {

std::vector<Document> finish_documents(std::vector<Document> docs, int k) {
  if (docs.size() > static_cast<std::size_t>(k)) docs.resize(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < docs.size(); ++i) docs[i].rank = static_cast<int>(i + 1);
  return docs;
}

std::unique_ptr<CorpusIndex> candidate_index(const std::vector<Document>& candidates) {
  std::vector<CorpusRecord> records;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& d = candidates[i];
    if (text::trim(d.snippet).empty()) continue;
    records.push_back({d.locator.empty() ? "c" + std::to_string(i) : d.locator, d.title, d.snippet});
  }
  return std::make_unique<CorpusIndex>(std::move(records));
}

}  // namespace

AugmentedInstance build(const RawInstance& raw, const BuildConfig& config, Generator& annotator,
                        Retriever& retriever) {
  AugmentedInstance out;
  out.raw = raw;
  try {
    if (text::trim(raw.x_origin).empty()) throw Error(Errc::FormatViolation, "empty input");
    out.category = classify(raw, config.sources);
    const Refinements refs = annotate_refinements(raw, out.category, annotator, config);
    out.retrieval_needed = refs.retrieval_needed;

    std::unique_ptr<CorpusIndex> pool_index;
    std::unique_ptr<Bm25Retriever> pool_retriever;
    Retriever* source = &retriever;
    if (out.category == Category::MultiHop && !raw.candidates.empty()) {
      pool_index = candidate_index(raw.candidates);
      pool_retriever = std::make_unique<Bm25Retriever>(*pool_index);
      source = pool_retriever.get();
    }

    int turn = 0;
    for (const auto& [action, query] : refs.queries) {
      std::vector<Document> docs;
      try {
        docs = source->retrieve(query, config.top_k);
      } catch (const Error& e) {
        throw Error(Errc::RetrievalError, e.what());
      }
      out.steps.push_back(SearchStep{++turn, action, query, finish_documents(std::move(docs), config.top_k)});
    }

    if (out.category == Category::MultiHop && !raw.support_ids.empty() &&
        !support_aligned(raw.support_ids, out.steps))
      throw Error(Errc::AlignmentMismatch, "retrieved contexts miss a support document");

    out.y_new = regenerate_answer(raw, out.steps, annotator, config);
    out.answer_provenance = AnswerProvenance::Regenerated;

    const Trajectory t = to_trajectory(out);
    const int max_turns = out.category == Category::MultiHop ? config.max_turns_multi_hop : config.max_turns_other;
    const auto problems = validate(t, SearchLimits{static_cast<std::size_t>(std::max(0, max_turns)),
                                                   static_cast<std::size_t>(config.top_k)});
    if (!problems.empty()) throw Error(Errc::InvariantViolation, problems.front());
    if (!structurally_equal(parse(render(t, config.tokens), config.tokens), t))
      throw Error(Errc::InvariantViolation, "instance does not round-trip");
  } catch (const Error& e) {
    out.dropped_reason = std::string(errc_name(e.code()));
    out.dropped_detail = e.what();
    spdlog::debug("dropped instance {}: {}", raw.id, e.what());
  } catch (const std::exception& e) {
    out.dropped_reason = std::string(errc_name(Errc::RuntimeFailure));
    out.dropped_detail = e.what();
  }
  return out;
}

BuildResult build_pool(const std::vector<RawInstance>& pool, const BuildConfig& config, Generator& annotator,
                       Retriever& retriever, std::string_view config_hash) {
  std::vector<std::size_t> work;
  BuildResult result;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (config.sources.is_passthrough(pool[i].source) && !pool[i].category)
      result.passthrough.push_back(pool[i]);
    else
      work.push_back(i);
  }

  std::optional<SerializedGenerator> serialized;
  Generator* gen = &annotator;
  if (config.workers > 1 && !annotator.concurrent_safe()) gen = &serialized.emplace(annotator);

  std::vector<AugmentedInstance> slots(work.size());
  run_parallel(work.size(), config.workers,
               [&](std::size_t i) { slots[i] = build(pool[work[i]], config, *gen, retriever); });

  nlohmann::json categories = nlohmann::json::object();
  nlohmann::json drops = nlohmann::json::object();
  nlohmann::json steps_hist = nlohmann::json::object();
  for (Category c : {Category::MultiTurn, Category::MultiHop, Category::Ambiguous})
    categories[std::string(category_name(c))] = 0;
  for (auto& inst : slots) {
    if (inst.dropped_reason) {
      auto& slot = drops[*inst.dropped_reason];
      slot = slot.is_null() ? 1 : slot.get<int>() + 1;
      result.dropped.push_back(std::move(inst));
      continue;
    }
    auto& c = categories[std::string(category_name(inst.category))];
    c = c.get<int>() + 1;
    auto& s = steps_hist[std::to_string(inst.steps.size())];
    s = s.is_null() ? 1 : s.get<int>() + 1;
    result.kept.push_back(std::move(inst));
  }

  result.manifest = {
      {"config_hash", std::string(config_hash)},
      {"input", pool.size()},
      {"kept", result.kept.size()},
      {"dropped", result.dropped.size()},
      {"passthrough", result.passthrough.size()},
      {"categories", categories},
      {"drops", drops},
      {"steps_histogram", steps_hist},
  };
  return result;
}

// ---------------------------------------------------------------------------
// Retention

std::size_t retained_count(std::size_t n, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error(Errc::InvariantViolation, "retention ratio outside [0, 1]");
  return std::min(n, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9)));
}

std::vector<AugmentedInstance> apply_retention(std::vector<AugmentedInstance> instances, double ratio,
                                               std::uint64_t seed) {
  const std::size_t m = retained_count(instances.size(), ratio);
  std::vector<std::size_t> idx(instances.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<std::size_t> chosen;
  chosen.reserve(m);
  std::mt19937_64 rng(seed);
  std::sample(idx.begin(), idx.end(), std::back_inserter(chosen), m, rng);
  for (std::size_t i : chosen) {
    instances[i].y_new = instances[i].raw.y_origin;
    instances[i].answer_provenance = AnswerProvenance::OriginalRetained;
  }
  return instances;
}

// ---------------------------------------------------------------------------
// Token statistics

std::size_t whitespace_token_count(std::string_view s) { return text::split_whitespace(s).size(); }

Histogram make_histogram(std::vector<std::size_t> lengths, std::size_t bin_width) {
  Histogram h;
  h.bin_width = std::max<std::size_t>(1, bin_width);
  for (std::size_t n : lengths) ++h.bins[n / h.bin_width * h.bin_width];
  if (!lengths.empty())
    h.mean = static_cast<double>(std::accumulate(lengths.begin(), lengths.end(), std::size_t{0})) /
             static_cast<double>(lengths.size());
  h.lengths = std::move(lengths);
  return h;
}

Histogram token_stats(std::span<const AugmentedInstance> instances, const TokenCounter& counter,
                      std::size_t bin_width) {
  std::vector<std::size_t> lengths;
  lengths.reserve(instances.size());
  for (const auto& inst : instances) lengths.push_back(counter(render(to_trajectory(inst))));
  return make_histogram(std::move(lengths), bin_width);
}

Histogram raw_token_stats(std::span<const AugmentedInstance> instances, const TokenCounter& counter,
                          std::size_t bin_width) {
  std::vector<std::size_t> lengths;
  lengths.reserve(instances.size());
  for (const auto& inst : instances) lengths.push_back(counter(inst.raw.x_origin) + counter(inst.raw.y_origin));
  return make_histogram(std::move(lengths), bin_width);
}

// ---------------------------------------------------------------------------
// Records

nlohmann::json document_record(const Document& d) {
  return {{"title", d.title}, {"snippet", d.snippet}, {"locator", d.locator}, {"rank", d.rank}, {"score", d.score}};
}

Document document_from_record(const nlohmann::json& j, int rank) {
  Document d;
  d.title = j.value("title", "");
  d.snippet = j.value("snippet", j.value("body", j.value("text", "")));
  d.locator = j.value("locator", j.value("id", ""));
  d.rank = j.value("rank", rank);
  d.score = j.value("score", 0.0);
  return d;
}

namespace {

std::string require_string(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string())
    throw Error(Errc::ConfigError, std::string("record field '") + key + "' missing or not a string");
  return j[key].get<std::string>();
}

}  // namespace

nlohmann::json raw_record(const RawInstance& raw) {
  nlohmann::json j = {{"id", raw.id}, {"source", raw.source}, {"input", raw.x_origin}, {"output", raw.y_origin}};
  if (raw.category) j["category"] = std::string(category_name(*raw.category));
  if (!raw.candidates.empty()) {
    j["candidates"] = nlohmann::json::array();
    for (const auto& d : raw.candidates) j["candidates"].push_back(document_record(d));
  }
  if (!raw.support_ids.empty()) j["support"] = raw.support_ids;
  return j;
}

nlohmann::json instance_record(const AugmentedInstance& inst) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : inst.steps) {
    nlohmann::json docs = nlohmann::json::array();
    for (const auto& d : s.documents) docs.push_back(document_record(d));
    steps.push_back({{"turn", s.turn}, {"action", std::string(action_name(s.action))}, {"query", s.query},
                     {"documents", docs}});
  }
  nlohmann::json j = raw_record(inst.raw);
  j["category"] = std::string(category_name(inst.category));
  j["retrieval_needed"] = inst.retrieval_needed;
  j["steps"] = steps;
  j["answer"] = inst.y_new;
  j["provenance"] = std::string(provenance_name(inst.answer_provenance));
  if (inst.dropped_reason) j["dropped_reason"] = *inst.dropped_reason;
  return j;
}

namespace {

RawInstance raw_from_record(const nlohmann::json& j) {
  RawInstance r;
  r.id = require_string(j, "id");
  r.source = j.value("source", "");
  r.x_origin = require_string(j, "input");
  r.y_origin = j.value("output", "");
  if (j.contains("category")) {
    auto c = category_from_name(j["category"].get<std::string>());
    if (!c) throw Error(Errc::ConfigError, "unknown category '" + j["category"].get<std::string>() + "'");
    r.category = c;
  }
  if (j.contains("candidates")) {
    int rank = 0;
    for (const auto& d : j["candidates"]) r.candidates.push_back(document_from_record(d, ++rank));
  }
  if (j.contains("support")) r.support_ids = j["support"].get<std::vector<std::string>>();
  return r;
}

}  // namespace

AugmentedInstance instance_from_record(const nlohmann::json& j) {
  AugmentedInstance inst;
  try {
    inst.raw = raw_from_record(j);
    inst.category = inst.raw.category.value_or(Category::MultiTurn);
    inst.retrieval_needed = j.value("retrieval_needed", true);
    for (const auto& s : j.value("steps", nlohmann::json::array())) {
      SearchStep step;
      step.turn = s.at("turn").get<int>();
      auto a = action_from_name(s.at("action").get<std::string>());
      if (!a) throw Error(Errc::ConfigError, "unknown action in record");
      step.action = *a;
      step.query = s.at("query").get<std::string>();
      int rank = 0;
      for (const auto& d : s.value("documents", nlohmann::json::array()))
        step.documents.push_back(document_from_record(d, ++rank));
      inst.steps.push_back(std::move(step));
    }
    inst.y_new = j.value("answer", "");
    inst.answer_provenance = j.value("provenance", "regenerated") == "original_retained"
                                 ? AnswerProvenance::OriginalRetained
                                 : AnswerProvenance::Regenerated;
    if (j.contains("dropped_reason")) inst.dropped_reason = j["dropped_reason"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, std::string("bad instance record: ") + e.what());
  }
  return inst;
}

std::vector<RawInstance> read_pool(std::istream& in) {
  std::vector<RawInstance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(raw_from_record(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ConfigError, "pool line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(Errc::ConfigError, "pool line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<RawInstance> read_pool_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open pool file " + path.string());
  return read_pool(in);
}

void write_build_outputs(const std::filesystem::path& dir, const BuildResult& result) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(Errc::RuntimeFailure, "cannot write " + (dir / name).string());
    return f;
  };
  {
    auto f = open("instances.jsonl");
    for (const auto& inst : result.kept) f << instance_record(inst).dump() << '\n';
  }
  {
    auto f = open("passthrough.jsonl");
    for (const auto& raw : result.passthrough) f << raw_record(raw).dump() << '\n';
  }
  {
    auto f = open("manifest.json");
    f << result.manifest.dump(2) << '\n';
  }
}

}  // namespace qrefine
