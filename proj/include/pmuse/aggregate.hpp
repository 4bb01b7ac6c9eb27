#pragma once

/**
 * Compressed reasoning aggregation and answer-selection baselines.
 *
 * compress_trajectory() turns a trajectory into a three-part report
 * (planning, methods, final reasoning) plus its candidate answer.
 * aggregate_reports() asks one model call, with no tools available, to pick
 * a single answer from the reports by coherence rather than frequency.
 * The three voting baselines are pure functions.
 */

#include <algorithm>
#include <map>
#include <set>
#include <unordered_set>

#include "pmuse/backends.hpp"
#include "pmuse/prompts.hpp"
#include "pmuse/transcript.hpp"
#include "pmuse/uncertainty.hpp"

namespace pmuse {

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct SolutionMethod {
  std::string subproblem;
  std::string tool;
  json parameters = json::object();
  std::string subanswer;

  bool operator==(const SolutionMethod&) const = default;
};

struct Report {
  std::string trajectory_id;
  std::string solution_planning;
  std::vector<SolutionMethod> solution_methods;
  std::string final_reasoning;
  std::string candidate_answer;
  std::uint64_t compressed_token_count = 0;
  bool degraded = false;

  bool operator==(const Report&) const = default;
};

/// The model-visible part of a report; this is what gets token-counted.
inline json report_body(const Report& r) {
  json methods = json::array();
  for (const auto& m : r.solution_methods)
    methods.push_back({{"subproblem", m.subproblem}, {"tool", m.tool}, {"parameters", m.parameters}, {"subanswer", m.subanswer}});
  return json{{"solution_planning", r.solution_planning},
              {"solution_methods", methods},
              {"final_reasoning", r.final_reasoning},
              {"candidate_answer", r.candidate_answer}};
}

inline void to_json(json& j, const Report& r) {
  j = report_body(r);
  j["schema"] = kSchemaVersion;
  j["trajectory_id"] = r.trajectory_id;
  j["compressed_token_count"] = r.compressed_token_count;
  j["degraded"] = r.degraded;
}

namespace detail {

inline const json& require(const json& j, const char* key, json::value_t type) {
  auto it = j.find(key);
  if (it == j.end()) fail(ErrorCode::SchemaError, std::string("missing field '") + key + "'");
  if (it->type() != type) fail(ErrorCode::SchemaError, std::string("field '") + key + "' has the wrong type");
  return *it;
}

inline Report parse_report_body(const json& j) {
  if (!j.is_object()) fail(ErrorCode::SchemaError, "report is not a JSON object");
  Report r;
  r.solution_planning = require(j, "solution_planning", json::value_t::string).get<std::string>();
  r.final_reasoning = require(j, "final_reasoning", json::value_t::string).get<std::string>();
  r.candidate_answer = require(j, "candidate_answer", json::value_t::string).get<std::string>();
  for (const auto& m : require(j, "solution_methods", json::value_t::array)) {
    if (!m.is_object()) fail(ErrorCode::SchemaError, "solution method is not an object");
    SolutionMethod sm;
    sm.subproblem = require(m, "subproblem", json::value_t::string).get<std::string>();
    sm.tool = require(m, "tool", json::value_t::string).get<std::string>();
    sm.parameters = m.value("parameters", json::object());
    if (!sm.parameters.is_object()) fail(ErrorCode::SchemaError, "method parameters must be an object");
    auto sub = m.find("subanswer");
    if (sub == m.end() || !(sub->is_string() || sub->is_null()))
      fail(ErrorCode::SchemaError, "field 'subanswer' has the wrong type");
    sm.subanswer = sub->is_string() ? sub->get<std::string>() : "";
    r.solution_methods.push_back(std::move(sm));
  }
  return r;
}

}  // namespace detail

inline void from_json(const json& j, Report& r) {
  r = detail::parse_report_body(j);
  r.trajectory_id = j.at("trajectory_id").get<std::string>();
  r.compressed_token_count = j.at("compressed_token_count").get<std::uint64_t>();
  r.degraded = j.at("degraded").get<bool>();
}

struct CompressionOptions {
  std::uint64_t snippet_cap_tokens = 256;
  int max_repairs = 3;
};

namespace detail {

inline std::uint64_t hash_words(const std::vector<std::string>& words, std::size_t begin, std::size_t n) {
  std::uint64_t h = text::fnv1a("shingle");
  for (std::size_t i = begin; i < begin + n; ++i) {
    h = text::fnv1a(words[i], h);
    h = text::fnv1a(" ", h);
  }
  return h;
}

inline void collect_strings(const json& j, std::string& out) {
  if (j.is_string()) {
    out += j.get<std::string>();
    out += '\n';
  } else if (j.is_structured()) {
    for (const auto& v : j) collect_strings(v, out);
  }
}

}  // namespace detail

/// True if some run of more than `cap` consecutive words of any tool response
/// appears verbatim in the report.
inline bool report_leaks_tool_output(const Report& report, const Trajectory& traj, std::uint64_t cap) {
  std::string body;
  detail::collect_strings(report_body(report), body);
  auto words = text::split_whitespace(body);
  std::size_t window = static_cast<std::size_t>(cap) + 1;
  if (words.size() < window) return false;
  std::unordered_set<std::uint64_t> shingles;
  for (std::size_t i = 0; i + window <= words.size(); ++i) shingles.insert(detail::hash_words(words, i, window));
  for (const auto& s : traj.steps) {
    if (!s.tool_response) continue;
    auto resp = text::split_whitespace(s.tool_response->content);
    for (std::size_t i = 0; i + window <= resp.size(); ++i)
      if (shingles.count(detail::hash_words(resp, i, window))) return true;
  }
  return false;
}

/// Last reasoning step plus the final answer, used when compression fails.
inline Report degraded_report(const Trajectory& traj, const ModelBackend& counter) {
  Report r;
  r.trajectory_id = traj.id;
  r.degraded = true;
  if (!traj.steps.empty()) r.final_reasoning = reasoning_text(traj.steps.back());
  r.candidate_answer = traj.final_answer.value_or("");
  r.compressed_token_count = counter.count_tokens(report_body(r).dump());
  return r;
}

namespace detail {

template <typename Validate>
auto call_with_repairs(ModelBackend& backend, ModelRequest req, const std::string& repair_template, int max_repairs,
                       Validate&& validate) -> std::optional<decltype(validate(std::string()))> {
  for (int attempt = 0;; ++attempt) {
    std::string output = backend.chat_generate(req).text();
    std::string problem;
    try {
      return validate(output);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SchemaError) throw;
      problem = e.what();
    }
    if (attempt >= max_repairs) return std::nullopt;
    req.messages.push_back({Role::Assistant, output, std::nullopt, {}});
    std::map<std::string, std::string, std::less<>> vars{{"error", problem}};
    req.messages.push_back({Role::User, text::substitute(repair_template, [&](std::string_view k) -> const std::string* {
                              auto it = vars.find(k);
                              return it == vars.end() ? nullptr : &it->second;
                            }), std::nullopt, {}});
  }
}

inline std::string fill(const std::string& tmpl, const std::map<std::string, std::string, std::less<>>& vars) {
  return text::substitute(tmpl, [&](std::string_view k) -> const std::string* {
    auto it = vars.find(k);
    return it == vars.end() ? nullptr : &it->second;
  });
}

inline json parse_json_output(const std::string& output) {
  json j = json::parse(text::strip_code_fence(output), nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::SchemaError, "output is not valid JSON");
  return j;
}

}  // namespace detail

/// One compression call plus up to `max_repairs` repair rounds. Trajectories
/// without a final answer, and outputs that never validate, produce a
/// degraded report instead of an error.
inline Report compress_trajectory(const Trajectory& traj, const std::string& question, ModelBackend& backend,
                                  const PromptSet& prompts = {}, const CompressionOptions& options = {}) {
  if (!traj.final_answer || traj.status != TrajectoryStatus::Complete) return degraded_report(traj, backend);

  ModelRequest req;
  req.purpose = Purpose::Compress;
  req.subject = traj.id;
  req.logprobs_required = false;
  req.temperature = 0.0;
  req.max_tokens = 8192;
  req.messages.push_back({Role::User,
                          detail::fill(prompts.compress, {{"trajectory_id", traj.id},
                                                          {"question", question},
                                                          {"transcript", render_transcript(traj, question)}}),
                          std::nullopt,
                          {}});

  auto report = detail::call_with_repairs(backend, req, prompts.compress_repair, options.max_repairs, [&](const std::string& out) {
    Report r = detail::parse_report_body(detail::parse_json_output(out));
    if (r.candidate_answer != *traj.final_answer)
      fail(ErrorCode::SchemaError, "candidate_answer must equal the trajectory's final answer \"" + *traj.final_answer + "\"");
    if (report_leaks_tool_output(r, traj, options.snippet_cap_tokens))
      fail(ErrorCode::SchemaError, "report copies a tool response verbatim beyond " +
                                       std::to_string(options.snippet_cap_tokens) + " tokens");
    return r;
  });
  if (!report) return degraded_report(traj, backend);
  report->trajectory_id = traj.id;
  report->compressed_token_count = backend.count_tokens(report_body(*report).dump());
  return *report;
}

// ---------------------------------------------------------------------------
// Entity graph
// ---------------------------------------------------------------------------

struct Relation {
  std::string source;
  std::string target;
  std::string label;

  bool operator==(const Relation&) const = default;
};

struct EntityGraph {
  std::vector<std::string> vertices;  // canonical names, unique
  std::vector<Relation> relations;
  std::vector<bool> effective_flags;  // aligned with vertices

  std::size_t effective_count() const {
    return static_cast<std::size_t>(std::count(effective_flags.begin(), effective_flags.end(), true));
  }

  void add_vertex(const std::string& name, bool effective) {
    vertices.push_back(name);
    effective_flags.push_back(effective);
  }

  /// Throws SchemaError naming the first broken invariant.
  void validate() const {
    if (effective_flags.size() != vertices.size()) fail(ErrorCode::SchemaError, "effective_flags must align with vertices");
    std::set<std::string> names(vertices.begin(), vertices.end());
    if (names.size() != vertices.size()) fail(ErrorCode::SchemaError, "duplicate vertex");
    for (const auto& r : relations)
      if (!names.count(r.source) || !names.count(r.target))
        fail(ErrorCode::SchemaError, "relation endpoint '" + (names.count(r.source) ? r.target : r.source) + "' is not a vertex");
  }

  bool operator==(const EntityGraph&) const = default;
};

inline void to_json(json& j, const EntityGraph& g) {
  json rels = json::array();
  for (const auto& r : g.relations) rels.push_back({{"source", r.source}, {"target", r.target}, {"label", r.label}});
  j = json{{"vertices", g.vertices}, {"relations", rels}, {"effective_flags", g.effective_flags}};
}

inline void from_json(const json& j, EntityGraph& g) {
  g = EntityGraph{};
  if (!j.is_object()) fail(ErrorCode::SchemaError, "entity graph is not an object");
  for (const auto& v : detail::require(j, "vertices", json::value_t::array)) {
    if (!v.is_string()) fail(ErrorCode::SchemaError, "vertex is not a string");
    g.vertices.push_back(text::canonical_answer(v.get<std::string>()));
  }
  for (const auto& f : detail::require(j, "effective_flags", json::value_t::array)) {
    if (!f.is_boolean()) fail(ErrorCode::SchemaError, "effective flag is not a boolean");
    g.effective_flags.push_back(f.get<bool>());
  }
  for (const auto& r : j.value("relations", json::array())) {
    if (!r.is_object()) fail(ErrorCode::SchemaError, "relation is not an object");
    g.relations.push_back({text::canonical_answer(detail::require(r, "source", json::value_t::string).get<std::string>()),
                           text::canonical_answer(detail::require(r, "target", json::value_t::string).get<std::string>()),
                           r.value("label", std::string())});
  }
  g.validate();
}

/// Backend-driven entity extraction. Effectiveness is judged against
/// `gold_answer` when given, else against the trajectory's own answer.
/// Invalid graphs go through the repair path; persistent failure throws
/// SchemaError.
inline EntityGraph extract_entity_graph(const Trajectory& traj, const std::string& question,
                                        const std::optional<std::string>& gold_answer, ModelBackend& backend,
                                        const PromptSet& prompts = {}, int max_repairs = 3) {
  if (traj.steps.empty()) return {};
  ModelRequest req;
  req.purpose = Purpose::ExtractEntities;
  req.subject = traj.id;
  req.logprobs_required = false;
  req.max_tokens = 8192;
  req.messages.push_back({Role::User,
                          detail::fill(prompts.extract, {{"question", question},
                                                         {"transcript", render_transcript(traj, question)},
                                                         {"reference_answer", gold_answer.value_or(traj.final_answer.value_or(""))}}),
                          std::nullopt,
                          {}});
  auto graph = detail::call_with_repairs(backend, req, prompts.extract_repair, max_repairs,
                                         [](const std::string& out) { return detail::parse_json_output(out).get<EntityGraph>(); });
  if (!graph) fail(ErrorCode::SchemaError, "entity extraction for '" + traj.id + "' never produced a valid graph");
  return *graph;
}

/// 1 - |V_eff| / |V_total|.
inline double redundancy_ratio(const EntityGraph& graph) {
  if (graph.vertices.empty()) fail(ErrorCode::EmptyGraph, "graph has no vertices");
  if (graph.effective_flags.size() != graph.vertices.size())
    fail(ErrorCode::SchemaError, "effective_flags must align with vertices");
  return 1.0 - static_cast<double>(graph.effective_count()) / static_cast<double>(graph.vertices.size());
}

// ---------------------------------------------------------------------------
// Final answers
// ---------------------------------------------------------------------------

enum class SelectionMethod { Aggregation, MajorityVote, WeightedVote, MaxToolCall };

inline std::string_view to_string(SelectionMethod m) {
  switch (m) {
    case SelectionMethod::Aggregation: return "aggregation";
    case SelectionMethod::MajorityVote: return "majority_vote";
    case SelectionMethod::WeightedVote: return "weighted_vote";
    case SelectionMethod::MaxToolCall: return "max_tool_call";
  }
  return "aggregation";
}

inline SelectionMethod parse_selection_method(std::string_view s) {
  if (s == "aggregation") return SelectionMethod::Aggregation;
  if (s == "majority_vote" || s == "majority") return SelectionMethod::MajorityVote;
  if (s == "weighted_vote" || s == "weighted") return SelectionMethod::WeightedVote;
  if (s == "max_tool_call" || s == "maxtool") return SelectionMethod::MaxToolCall;
  fail(ErrorCode::InvalidArgument, "unknown selection method '" + std::string(s) + "'");
}

struct FinalAnswer {
  std::string answer;
  std::string justification;
  SelectionMethod method = SelectionMethod::Aggregation;
  std::vector<std::string> inputs_used;
  std::vector<std::string> warnings;

  bool operator==(const FinalAnswer&) const = default;
};

inline void to_json(json& j, const FinalAnswer& f) {
  j = json{{"schema", kSchemaVersion},
           {"answer", f.answer},
           {"justification", f.justification},
           {"method", to_string(f.method)},
           {"inputs_used", f.inputs_used},
           {"warnings", f.warnings}};
}

inline void from_json(const json& j, FinalAnswer& f) {
  f.answer = j.at("answer").get<std::string>();
  f.justification = j.value("justification", std::string());
  f.method = parse_selection_method(j.at("method").get<std::string>());
  f.inputs_used = j.value("inputs_used", std::vector<std::string>{});
  f.warnings = j.value("warnings", std::vector<std::string>{});
}

struct AggregationOptions {
  std::uint64_t context_budget_tokens = 131072;
  int max_repairs = 3;
};

namespace detail {

inline json report_for_prompt(const Report& r) {
  json j = report_body(r);
  j["report_id"] = r.trajectory_id;
  if (r.degraded) j["degraded"] = true;
  return j;
}

// True if `answer` names two or more distinct candidate answers without
// being one of them.
inline bool enumerates_alternatives(const std::string& answer, std::span<const Report> reports) {
  std::set<std::string> candidates;
  for (const auto& r : reports) {
    auto c = text::canonical_answer(r.candidate_answer);
    if (!c.empty()) candidates.insert(c);
  }
  auto a = text::canonical_answer(answer);
  if (candidates.count(a)) return false;
  std::size_t named = 0;
  for (const auto& c : candidates) named += a.find(c) != std::string::npos;
  return named >= 2;
}

}  // namespace detail

/// Reasoning-guided aggregation over compressed reports. The request carries
/// an empty tool registry, so tool calls are impossible by construction.
/// A single report is returned as is without a model call.
inline FinalAnswer aggregate_reports(const std::string& question, std::vector<Report> reports, ModelBackend& backend,
                                     const PromptSet& prompts = {}, const AggregationOptions& options = {}) {
  if (reports.empty()) fail(ErrorCode::InvalidArgument, "aggregation needs at least one report");
  FinalAnswer out;
  out.method = SelectionMethod::Aggregation;
  for (const auto& r : reports) out.inputs_used.push_back(r.trajectory_id);
  if (std::all_of(reports.begin(), reports.end(), [](const Report& r) { return r.degraded; }))
    out.warnings.push_back("all reports are degraded");

  if (reports.size() == 1) {
    out.answer = reports.front().candidate_answer;
    out.justification = "single candidate report";
    return out;
  }

  auto render = [&] {
    json list = json::array();
    for (const auto& r : reports) list.push_back(detail::report_for_prompt(r));
    return detail::fill(prompts.aggregate, {{"question", question},
                                            {"report_count", std::to_string(reports.size())},
                                            {"reports", list.dump()}});
  };
  std::string prompt = render();

  // Overflow: trim the longest reports first, one field class at a time.
  // candidate_answer and final_reasoning are never touched.
  using Trim = bool (*)(Report&);
  const Trim stages[] = {
      [](Report& r) {
        bool changed = false;
        for (auto& m : r.solution_methods)
          if (!m.parameters.empty()) {
            m.parameters = json::object();
            changed = true;
          }
        return changed;
      },
      [](Report& r) {
        bool changed = false;
        for (auto& m : r.solution_methods) {
          auto words = text::split_whitespace(m.subanswer);
          if (words.size() <= 16) continue;
          words.resize(16);
          std::string cut;
          for (const auto& w : words) cut += (cut.empty() ? "" : " ") + w;
          m.subanswer = cut + " ...";
          changed = true;
        }
        return changed;
      },
      [](Report& r) {
        if (r.solution_planning.empty()) return false;
        r.solution_planning.clear();
        return true;
      },
  };
  for (Trim stage : stages) {
    if (backend.count_tokens(prompt) <= options.context_budget_tokens) break;
    std::vector<std::size_t> order(reports.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return report_body(reports[a]).dump().size() > report_body(reports[b]).dump().size();
    });
    for (std::size_t i : order) {
      if (!stage(reports[i])) continue;
      prompt = render();
      if (backend.count_tokens(prompt) <= options.context_budget_tokens) break;
    }
  }
  if (backend.count_tokens(prompt) > options.context_budget_tokens)
    fail(ErrorCode::ContextOverflow, "reports do not fit the aggregation context budget after trimming");

  ModelRequest req;
  req.purpose = Purpose::Aggregate;
  req.subject = question;
  req.tool_schemas = ToolRegistry{}.schemas();
  req.logprobs_required = false;
  req.temperature = 0.0;
  req.max_tokens = 4096;
  req.messages.push_back({Role::User, prompt, std::nullopt, {}});

  auto parsed = detail::call_with_repairs(backend, req, prompts.aggregate_repair, options.max_repairs, [&](const std::string& s) {
    json j = detail::parse_json_output(s);
    if (!j.is_object()) fail(ErrorCode::SchemaError, "output is not a JSON object");
    std::string answer(text::trim(detail::require(j, "answer", json::value_t::string).get<std::string>()));
    if (answer.empty()) fail(ErrorCode::SchemaError, "answer is empty");
    if (answer.find('\n') != std::string::npos || detail::enumerates_alternatives(answer, reports))
      fail(ErrorCode::SchemaError, "answer must be a single value, not a list of alternatives");
    return std::make_pair(answer, j.value("justification", std::string()));
  });
  if (!parsed) fail(ErrorCode::SchemaError, "aggregation output never satisfied the single-answer contract");
  out.answer = parsed->first;
  out.justification = parsed->second;
  return out;
}

// ---------------------------------------------------------------------------
// Voting baselines
// ---------------------------------------------------------------------------

struct Candidate {
  std::string id;
  std::string answer;
  double confidence = 0.0;
};

namespace detail {

struct AnswerGroup {
  std::size_t first_seen = 0;
  std::size_t size = 0;
  double confidence = 0.0;
  std::vector<std::string> members;
};

inline std::vector<AnswerGroup> group_answers(std::span<const Candidate> cands) {
  std::vector<AnswerGroup> groups;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    auto key = text::canonical_answer(cands[i].answer);
    auto [it, fresh] = index.emplace(key, groups.size());
    if (fresh) groups.push_back({i, 0, 0.0, {}});
    auto& g = groups[it->second];
    ++g.size;
    g.confidence += cands[i].confidence;
    g.members.push_back(cands[i].id);
  }
  return groups;
}

}  // namespace detail

/// Largest canonical-answer group wins; ties go to the higher summed
/// confidence, then to the group seen first. Returns the group's first
/// surface form.
inline FinalAnswer majority_vote(std::span<const Candidate> cands) {
  if (cands.empty()) fail(ErrorCode::NoAnswers, "no answers to vote on");
  auto groups = detail::group_answers(cands);
  const auto* best = &groups.front();
  for (const auto& g : groups)
    if (g.size > best->size || (g.size == best->size && g.confidence > best->confidence)) best = &g;
  return {cands[best->first_seen].answer,
          std::to_string(best->size) + " of " + std::to_string(cands.size()) + " answers agree",
          SelectionMethod::MajorityVote,
          best->members,
          {}};
}

inline std::vector<Candidate> make_candidates(std::span<const std::string> answers, std::span<const double> confidences = {}) {
  std::vector<Candidate> out;
  for (std::size_t i = 0; i < answers.size(); ++i)
    out.push_back({std::to_string(i), answers[i], i < confidences.size() ? confidences[i] : 0.0});
  return out;
}

inline FinalAnswer majority_vote(std::span<const std::string> answers) {
  auto c = make_candidates(answers);
  return majority_vote(std::span<const Candidate>(c));
}

/// Group score = summed confidence; ties go to the group seen first.
inline FinalAnswer weighted_vote(std::span<const Candidate> cands) {
  if (cands.empty()) fail(ErrorCode::NoAnswers, "no answers to vote on");
  for (const auto& c : cands)
    if (!(c.confidence > 0.0 && c.confidence <= 1.0)) fail(ErrorCode::InvalidArgument, "confidences must lie in (0, 1]");
  auto groups = detail::group_answers(cands);
  const auto* best = &groups.front();
  for (const auto& g : groups)
    if (g.confidence > best->confidence) best = &g;
  return {cands[best->first_seen].answer, "summed confidence " + text::format_real(best->confidence),
          SelectionMethod::WeightedVote, best->members, {}};
}

inline FinalAnswer weighted_vote(std::span<const std::string> answers, std::span<const double> confidences) {
  if (answers.size() != confidences.size())
    fail(ErrorCode::LengthMismatch, std::to_string(answers.size()) + " answers but " + std::to_string(confidences.size()) + " confidences");
  auto c = make_candidates(answers, confidences);
  return weighted_vote(std::span<const Candidate>(c));
}

/// Voting candidates from trajectories that reached a final answer, with
/// trajectory confidence attached.
inline std::vector<Candidate> candidates_from(std::span<const Trajectory> trajectories) {
  std::vector<Candidate> out;
  for (const auto& t : trajectories) {
    if (!t.final_answer) continue;
    double conf = 0.0;
    try {
      conf = trajectory_confidence(t);
    } catch (const Error&) {
    }
    out.push_back({t.id, *t.final_answer, conf});
  }
  return out;
}

/// Answer of the trajectory with the most tool calls; ties go to the higher
/// trajectory confidence, then to the lowest trajectory id.
inline FinalAnswer max_tool_call_select(std::span<const Trajectory> trajectories) {
  const Trajectory* best = nullptr;
  double best_conf = 0.0;
  for (const auto& t : trajectories) {
    if (!t.final_answer) continue;
    double conf = 0.0;
    try {
      conf = trajectory_confidence(t);
    } catch (const Error&) {
    }
    if (!best) {
      best = &t;
      best_conf = conf;
      continue;
    }
    auto calls = t.tool_call_count();
    auto best_calls = best->tool_call_count();
    bool better = calls > best_calls ||
                  (calls == best_calls && (conf > best_conf || (conf == best_conf && t.id < best->id)));
    if (better) {
      best = &t;
      best_conf = conf;
    }
  }
  if (!best) fail(ErrorCode::NoAnswers, "no trajectory reached a final answer");
  return {*best->final_answer, std::to_string(best->tool_call_count()) + " tool calls", SelectionMethod::MaxToolCall,
          {best->id}, {}};
}

}  // namespace pmuse
