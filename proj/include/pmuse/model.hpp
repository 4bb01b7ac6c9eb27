#pragma once

/**
 * Trajectory data model
 *
 * A trajectory is the ordered record of one agent run on one task: each step
 * holds the model tokens of a think segment (Reasoning region), an optional
 * tool call (Exploration region), and the tool's response. Tool responses are
 * prefill, not generation, so they never count toward generated tokens.
 *
 * JSONL persistence uses schema version 1; every field of every type below
 * is serialized.
 */

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "pmuse/error.hpp"
#include "pmuse/text.hpp"

namespace pmuse {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum class RegionTag { Reasoning, Exploration };

inline std::string_view to_string(RegionTag r) {
  return r == RegionTag::Reasoning ? "reasoning" : "exploration";
}

inline RegionTag parse_region(std::string_view s) {
  if (s == "reasoning") return RegionTag::Reasoning;
  if (s == "exploration") return RegionTag::Exploration;
  fail(ErrorCode::SchemaError, "unknown region tag '" + std::string(s) + "'");
}

struct Token {
  std::string text;
  double logprob = 0.0;  // natural log, <= 0
  RegionTag region = RegionTag::Reasoning;

  bool operator==(const Token&) const = default;
};

struct ToolCall {
  std::string tool_name;
  json arguments = json::object();
  std::vector<Token> raw_tokens;

  bool operator==(const ToolCall&) const = default;
};

struct ToolResponse {
  std::string content;
  std::uint64_t token_count = 0;
  bool error_flag = false;

  bool operator==(const ToolResponse&) const = default;
};

struct Step {
  std::uint32_t index = 0;
  std::vector<Token> reasoning_tokens;
  std::optional<ToolCall> tool_call;
  std::optional<ToolResponse> tool_response;
  bool is_terminal = false;

  std::size_t generated_tokens() const {
    return reasoning_tokens.size() + (tool_call ? tool_call->raw_tokens.size() : 0);
  }

  std::span<const Token> region_tokens(RegionTag region) const {
    if (region == RegionTag::Reasoning) return reasoning_tokens;
    if (tool_call) return tool_call->raw_tokens;
    return {};
  }

  bool operator==(const Step&) const = default;
};

struct FromScratch {
  bool operator==(const FromScratch&) const = default;
};

struct Branch {
  std::string parent_id;
  std::uint32_t branch_step_index = 0;

  bool operator==(const Branch&) const = default;
};

using Origin = std::variant<FromScratch, Branch>;

enum class TrajectoryStatus { Complete, BudgetExhausted, Failed };

inline std::string_view to_string(TrajectoryStatus s) {
  switch (s) {
    case TrajectoryStatus::Complete: return "complete";
    case TrajectoryStatus::BudgetExhausted: return "budget_exhausted";
    case TrajectoryStatus::Failed: return "failed";
  }
  return "failed";
}

struct Trajectory {
  std::string id;
  std::string task_id;
  Origin origin = FromScratch{};
  std::vector<Step> steps;
  std::optional<std::string> final_answer;
  std::uint64_t generated_token_count = 0;
  std::uint64_t prompt_token_count = 0;
  std::int64_t sampling_seed = 0;
  // Flag for budget-exhausted or failed runs; `error` carries the reason.
  TrajectoryStatus status = TrajectoryStatus::Complete;
  std::string error;

  bool is_branch() const { return std::holds_alternative<Branch>(origin); }

  std::uint64_t context_tokens() const { return generated_token_count + prompt_token_count; }

  std::size_t tool_call_count() const {
    std::size_t n = 0;
    for (const auto& s : steps) n += s.tool_call.has_value();
    return n;
  }

  /// Generated tokens over steps [0, end).
  std::uint64_t generated_before(std::size_t end) const {
    std::uint64_t n = 0;
    for (std::size_t i = 0; i < end && i < steps.size(); ++i) n += steps[i].generated_tokens();
    return n;
  }

  bool operator==(const Trajectory&) const = default;
};

enum class RegionStrategy { Reasoning, Exploration, Mixed };

inline std::string_view to_string(RegionStrategy s) {
  switch (s) {
    case RegionStrategy::Reasoning: return "reasoning";
    case RegionStrategy::Exploration: return "exploration";
    case RegionStrategy::Mixed: return "mixed";
  }
  return "mixed";
}

inline RegionStrategy parse_strategy(std::string_view s) {
  if (s == "reasoning") return RegionStrategy::Reasoning;
  if (s == "exploration") return RegionStrategy::Exploration;
  if (s == "mixed") return RegionStrategy::Mixed;
  fail(ErrorCode::ConfigError, "unknown region strategy '" + std::string(s) + "'");
}

/// Run configuration. Defaults follow the reference setting: N=8, M=1,
/// top-k=2, 3 branches per selected step.
struct RunConfig {
  std::uint32_t sampling_budget_N = 8;
  std::uint32_t initial_rollouts_M = 1;
  std::uint32_t branch_top_k = 2;
  std::uint32_t branches_per_step = 3;
  RegionStrategy region_strategy = RegionStrategy::Exploration;
  std::uint32_t max_steps = 50;
  std::uint64_t max_generated_tokens = 65536;
  std::uint32_t parallelism_P = 4;
  double temperature = 0.6;
  std::string rollout_backend = "default";
  std::string aggregation_backend = "default";
  std::int64_t seed = 0;

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorCode::ConfigError, m); };
    if (sampling_budget_N == 0) bad("sampling_budget must be positive");
    if (initial_rollouts_M == 0) bad("initial_rollouts must be positive");
    if (initial_rollouts_M > sampling_budget_N) bad("initial_rollouts must not exceed sampling_budget");
    if (branch_top_k == 0) bad("branch_top_k must be positive");
    if (branches_per_step == 0) bad("branches_per_step must be positive");
    if (max_steps == 0) bad("max_steps must be positive");
    if (max_generated_tokens == 0) bad("max_generated_tokens must be positive");
    if (parallelism_P == 0) bad("parallelism must be positive");
    if (!(temperature >= 0.0)) bad("temperature must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

namespace markers {
inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kCallOpen = "<tool_call>";
inline constexpr std::string_view kCallClose = "</tool_call>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";

inline bool is_marker(std::string_view token_text) {
  auto t = text::trim(token_text);
  return t == kThinkOpen || t == kThinkClose || t == kCallOpen || t == kCallClose ||
         t == kAnswerOpen || t == kAnswerClose;
}
}  // namespace markers

/// A token as emitted by a backend, before region tagging.
struct RawToken {
  std::string text;
  std::optional<double> logprob;

  bool operator==(const RawToken&) const = default;
};

struct SegmentedTurn {
  Step step;
  std::optional<std::string> answer;  // set for terminal steps that carry one
};

namespace detail {

inline ToolCall parse_tool_call_payload(std::string_view payload) {
  json parsed = json::parse(payload, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object())
    fail(ErrorCode::MalformedMarkers, "tool-call payload is not a JSON object");
  auto name = parsed.find("name");
  if (name == parsed.end() || !name->is_string() || name->get<std::string>().empty())
    fail(ErrorCode::MalformedMarkers, "tool-call payload lacks a non-empty \"name\"");
  ToolCall call;
  call.tool_name = name->get<std::string>();
  auto args = parsed.find("arguments");
  if (args == parsed.end()) {
    call.arguments = json::object();
  } else if (args->is_object()) {
    call.arguments = *args;
  } else if (args->is_string()) {
    json inner = json::parse(args->get<std::string>(), nullptr, false);
    if (inner.is_discarded() || !inner.is_object())
      fail(ErrorCode::MalformedMarkers, "tool-call arguments do not parse as an object");
    call.arguments = std::move(inner);
  } else {
    fail(ErrorCode::MalformedMarkers, "tool-call arguments must be an object");
  }
  return call;
}

inline double require_logprob(const RawToken& t) {
  if (!t.logprob) fail(ErrorCode::MissingLogprobs, "token '" + t.text + "' has no logprob");
  double lp = *t.logprob;
  if (!std::isfinite(lp) || lp > 0.0)
    fail(ErrorCode::MissingLogprobs, "token '" + t.text + "' has invalid logprob");
  return lp;
}

}  // namespace detail

/// Splits a marker-delimited assistant turn into a Step. Think content and
/// any text outside the tool-call segment is Reasoning; tool-call content is
/// Exploration. Marker tokens are structural and are dropped.
inline SegmentedTurn segment_step(std::span<const RawToken> stream, std::uint32_t index) {
  enum class State { Outside, Think, Call, Answer };
  State state = State::Outside;

  SegmentedTurn out;
  out.step.index = index;
  std::vector<Token> call_tokens;
  std::string call_text;
  std::string answer_text;
  std::string outside_text;
  bool saw_call = false;
  bool saw_answer = false;
  std::optional<ToolCall> call;

  auto expect = [&](bool ok, std::string_view marker) {
    if (!ok) fail(ErrorCode::MalformedMarkers, "unexpected " + std::string(marker));
  };

  for (const RawToken& raw : stream) {
    auto t = text::trim(raw.text);
    if (t == markers::kThinkOpen) {
      expect(state == State::Outside, t);
      state = State::Think;
    } else if (t == markers::kThinkClose) {
      expect(state == State::Think, t);
      state = State::Outside;
    } else if (t == markers::kCallOpen) {
      expect(state == State::Outside && !saw_call, t);
      state = State::Call;
      saw_call = true;
    } else if (t == markers::kCallClose) {
      expect(state == State::Call, t);
      call = detail::parse_tool_call_payload(call_text);
      state = State::Outside;
    } else if (t == markers::kAnswerOpen) {
      expect(state == State::Outside && !saw_answer, t);
      state = State::Answer;
      saw_answer = true;
    } else if (t == markers::kAnswerClose) {
      expect(state == State::Answer, t);
      state = State::Outside;
    } else {
      double lp = detail::require_logprob(raw);
      if (state == State::Call) {
        call_tokens.push_back({raw.text, lp, RegionTag::Exploration});
        call_text += raw.text;
      } else {
        out.step.reasoning_tokens.push_back({raw.text, lp, RegionTag::Reasoning});
        if (state == State::Answer) answer_text += raw.text;
        if (state == State::Outside) outside_text += raw.text;
      }
    }
  }
  if (state != State::Outside) fail(ErrorCode::MalformedMarkers, "unterminated segment");

  if (call) {
    call->raw_tokens = std::move(call_tokens);
    out.step.tool_call = std::move(call);
    out.step.is_terminal = false;
  } else {
    out.step.is_terminal = true;
    std::string ans = text::collapse_whitespace(saw_answer ? answer_text : outside_text);
    if (!ans.empty()) out.answer = std::move(ans);
  }
  return out;
}

/// Tool call delivered as a structured field instead of inline markers.
struct StructuredCall {
  std::string name;
  std::string arguments_text;

  bool operator==(const StructuredCall&) const = default;
};

/// Segmentation for wire protocols that deliver the tool call as a structured
/// field. Tokens whose characters overlap the serialized call are Exploration;
/// every other assistant token is Reasoning.
inline SegmentedTurn segment_structured(std::span<const RawToken> stream, const StructuredCall& call_field,
                                        std::uint32_t index) {
  std::vector<RawToken> body;
  std::vector<std::size_t> offsets;
  std::string joined;
  for (const RawToken& raw : stream) {
    if (markers::is_marker(raw.text)) continue;
    detail::require_logprob(raw);
    offsets.push_back(joined.size());
    joined += raw.text;
    body.push_back(raw);
  }

  if (call_field.name.empty()) fail(ErrorCode::MalformedMarkers, "structured tool call has no name");
  json args = json::parse(call_field.arguments_text.empty() ? std::string("{}") : call_field.arguments_text,
                          nullptr, false);
  if (args.is_discarded() || !args.is_object())
    fail(ErrorCode::MalformedMarkers, "structured tool-call arguments do not parse as an object");

  std::size_t begin = std::string::npos;
  std::size_t end = std::string::npos;
  if (!call_field.arguments_text.empty()) {
    auto at = joined.rfind(call_field.arguments_text);
    if (at != std::string::npos) {
      begin = at;
      end = at + call_field.arguments_text.size();
      auto name_at = joined.rfind(call_field.name, at);
      if (name_at != std::string::npos && at - name_at < 64) begin = name_at;
    }
  }

  SegmentedTurn out;
  out.step.index = index;
  ToolCall call;
  call.tool_name = call_field.name;
  call.arguments = std::move(args);
  for (std::size_t i = 0; i < body.size(); ++i) {
    std::size_t tb = offsets[i];
    std::size_t te = tb + body[i].text.size();
    bool in_call = begin != std::string::npos && tb < end && te > begin;
    if (in_call)
      call.raw_tokens.push_back({body[i].text, *body[i].logprob, RegionTag::Exploration});
    else
      out.step.reasoning_tokens.push_back({body[i].text, *body[i].logprob, RegionTag::Reasoning});
  }
  out.step.tool_call = std::move(call);
  out.step.is_terminal = false;
  return out;
}

/// Canonical assistant-turn text used when replaying a step as history.
inline std::string render_assistant_turn(const Step& step) {
  std::string out(markers::kThinkOpen);
  for (const auto& t : step.reasoning_tokens) out += t.text;
  out += markers::kThinkClose;
  if (step.tool_call) {
    out += markers::kCallOpen;
    for (const auto& t : step.tool_call->raw_tokens) out += t.text;
    out += markers::kCallClose;
  }
  return out;
}

inline std::string reasoning_text(const Step& step) {
  std::string out;
  for (const auto& t : step.reasoning_tokens) out += t.text;
  return std::string(text::trim(out));
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

enum class DiagnosticKind {
  StepIndexMismatch,
  TerminalWithToolCall,
  NonTerminalWithoutToolCall,
  ResponseWithoutCall,
  CallWithoutResponse,
  WrongRegionTag,
  InvalidLogprob,
  EmptyToolName,
  NonFinalTerminal,
  CountMismatch,
  AnswerWithoutTerminal,
  InvalidBranchIndex,
};

struct Diagnostic {
  DiagnosticKind kind;
  std::optional<std::uint32_t> step;
  std::string message;
};

/// Checks every Trajectory/Step invariant; an empty result means well-formed.
/// When `parent` is supplied for a branch, the branch index is checked
/// against it.
inline std::vector<Diagnostic> validate_trajectory(const Trajectory& traj, const Trajectory* parent = nullptr) {
  std::vector<Diagnostic> out;
  auto add = [&](DiagnosticKind k, std::optional<std::uint32_t> step, std::string msg) {
    out.push_back({k, step, std::move(msg)});
  };

  std::uint64_t generated = 0;
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const Step& s = traj.steps[i];
    auto at = static_cast<std::uint32_t>(i);
    if (s.index != i) add(DiagnosticKind::StepIndexMismatch, at, "step index field does not match position");
    if (s.is_terminal && s.tool_call) add(DiagnosticKind::TerminalWithToolCall, at, "terminal step carries a tool call");
    if (!s.is_terminal && !s.tool_call)
      add(DiagnosticKind::NonTerminalWithoutToolCall, at, "non-terminal step lacks a tool call");
    if (s.tool_response && !s.tool_call) add(DiagnosticKind::ResponseWithoutCall, at, "tool response without tool call");
    if (s.tool_call && !s.tool_response) add(DiagnosticKind::CallWithoutResponse, at, "tool call without tool response");
    if (s.is_terminal && i + 1 != traj.steps.size())
      add(DiagnosticKind::NonFinalTerminal, at, "terminal step is not the last step");

    bool bad_region = false;
    bool bad_logprob = false;
    for (const auto& t : s.reasoning_tokens) {
      bad_region |= t.region != RegionTag::Reasoning;
      bad_logprob |= !(t.logprob <= 0.0) || !std::isfinite(t.logprob);
    }
    if (s.tool_call) {
      if (s.tool_call->tool_name.empty()) add(DiagnosticKind::EmptyToolName, at, "empty tool name");
      for (const auto& t : s.tool_call->raw_tokens) {
        bad_region |= t.region != RegionTag::Exploration;
        bad_logprob |= !(t.logprob <= 0.0) || !std::isfinite(t.logprob);
      }
    }
    if (bad_region) add(DiagnosticKind::WrongRegionTag, at, "token carries the wrong region tag");
    if (bad_logprob) add(DiagnosticKind::InvalidLogprob, at, "token logprob is positive or not finite");
    generated += s.generated_tokens();
  }

  if (generated != traj.generated_token_count)
    add(DiagnosticKind::CountMismatch, std::nullopt,
        "generated_token_count " + std::to_string(traj.generated_token_count) + " != step sum " +
            std::to_string(generated));
  if (traj.final_answer && (traj.steps.empty() || !traj.steps.back().is_terminal))
    add(DiagnosticKind::AnswerWithoutTerminal, std::nullopt, "final answer set without a terminal step");

  if (const auto* b = std::get_if<Branch>(&traj.origin)) {
    std::size_t limit = parent ? parent->steps.size() : traj.steps.size();
    if (b->branch_step_index >= limit || (parent && parent->id != b->parent_id))
      add(DiagnosticKind::InvalidBranchIndex, b->branch_step_index, "branch index is not a valid parent step");
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline void to_json(json& j, const Token& t) {
  j = json{{"text", t.text}, {"logprob", t.logprob}, {"region", to_string(t.region)}};
}

inline void from_json(const json& j, Token& t) {
  t.text = j.at("text").get<std::string>();
  t.logprob = j.at("logprob").get<double>();
  t.region = parse_region(j.at("region").get<std::string>());
}

inline void to_json(json& j, const ToolCall& c) {
  j = json{{"tool_name", c.tool_name}, {"arguments", c.arguments}, {"raw_tokens", c.raw_tokens}};
}

inline void from_json(const json& j, ToolCall& c) {
  c.tool_name = j.at("tool_name").get<std::string>();
  c.arguments = j.at("arguments");
  c.raw_tokens = j.at("raw_tokens").get<std::vector<Token>>();
}

inline void to_json(json& j, const ToolResponse& r) {
  j = json{{"content", r.content}, {"token_count", r.token_count}, {"error_flag", r.error_flag}};
}

inline void from_json(const json& j, ToolResponse& r) {
  r.content = j.at("content").get<std::string>();
  r.token_count = j.at("token_count").get<std::uint64_t>();
  r.error_flag = j.at("error_flag").get<bool>();
}

inline void to_json(json& j, const Step& s) {
  j = json{{"index", s.index},
           {"reasoning_tokens", s.reasoning_tokens},
           {"tool_call", s.tool_call ? json(*s.tool_call) : json(nullptr)},
           {"tool_response", s.tool_response ? json(*s.tool_response) : json(nullptr)},
           {"is_terminal", s.is_terminal}};
}

inline void from_json(const json& j, Step& s) {
  s.index = j.at("index").get<std::uint32_t>();
  s.reasoning_tokens = j.at("reasoning_tokens").get<std::vector<Token>>();
  const auto& call = j.at("tool_call");
  s.tool_call = call.is_null() ? std::nullopt : std::optional<ToolCall>(call.get<ToolCall>());
  const auto& resp = j.at("tool_response");
  s.tool_response = resp.is_null() ? std::nullopt : std::optional<ToolResponse>(resp.get<ToolResponse>());
  s.is_terminal = j.at("is_terminal").get<bool>();
}

inline TrajectoryStatus parse_status(std::string_view s) {
  if (s == "complete") return TrajectoryStatus::Complete;
  if (s == "budget_exhausted") return TrajectoryStatus::BudgetExhausted;
  if (s == "failed") return TrajectoryStatus::Failed;
  fail(ErrorCode::SchemaError, "unknown trajectory status '" + std::string(s) + "'");
}

inline void to_json(json& j, const Trajectory& t) {
  json origin;
  if (const auto* b = std::get_if<Branch>(&t.origin))
    origin = json{{"kind", "branch"}, {"parent_id", b->parent_id}, {"branch_step_index", b->branch_step_index}};
  else
    origin = json{{"kind", "from_scratch"}};
  j = json{{"schema", kSchemaVersion},
           {"id", t.id},
           {"task_id", t.task_id},
           {"origin", std::move(origin)},
           {"steps", t.steps},
           {"final_answer", t.final_answer ? json(*t.final_answer) : json(nullptr)},
           {"generated_token_count", t.generated_token_count},
           {"prompt_token_count", t.prompt_token_count},
           {"sampling_seed", t.sampling_seed},
           {"status", to_string(t.status)},
           {"error", t.error}};
}

inline void from_json(const json& j, Trajectory& t) {
  if (j.value("schema", 0) != kSchemaVersion) fail(ErrorCode::SchemaError, "unsupported trajectory schema");
  t.id = j.at("id").get<std::string>();
  t.task_id = j.at("task_id").get<std::string>();
  const auto& origin = j.at("origin");
  auto kind = origin.at("kind").get<std::string>();
  if (kind == "branch")
    t.origin = Branch{origin.at("parent_id").get<std::string>(), origin.at("branch_step_index").get<std::uint32_t>()};
  else if (kind == "from_scratch")
    t.origin = FromScratch{};
  else
    fail(ErrorCode::SchemaError, "unknown origin kind '" + kind + "'");
  t.steps = j.at("steps").get<std::vector<Step>>();
  const auto& ans = j.at("final_answer");
  t.final_answer = ans.is_null() ? std::nullopt : std::optional<std::string>(ans.get<std::string>());
  t.generated_token_count = j.at("generated_token_count").get<std::uint64_t>();
  t.prompt_token_count = j.at("prompt_token_count").get<std::uint64_t>();
  t.sampling_seed = j.at("sampling_seed").get<std::int64_t>();
  t.status = parse_status(j.value("status", std::string("complete")));
  t.error = j.value("error", std::string());
}

inline std::string to_jsonl_line(const Trajectory& t) { return json(t).dump(); }

inline Trajectory trajectory_from_line(std::string_view line) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::SchemaError, "trajectory line is not valid JSON");
  return j.get<Trajectory>();
}

inline void to_json(json& j, const RunConfig& c) {
  j = json{{"sampling_budget", c.sampling_budget_N},
           {"initial_rollouts", c.initial_rollouts_M},
           {"branch_top_k", c.branch_top_k},
           {"branches_per_step", c.branches_per_step},
           {"region_strategy", to_string(c.region_strategy)},
           {"max_steps", c.max_steps},
           {"max_generated_tokens", c.max_generated_tokens},
           {"parallelism", c.parallelism_P},
           {"temperature", c.temperature},
           {"rollout_backend", c.rollout_backend},
           {"aggregation_backend", c.aggregation_backend},
           {"seed", c.seed}};
}

/// Reads the keys present in `j` over the values already in `c`.
inline void merge_run_config(const json& j, RunConfig& c) {
  auto take = [&](const char* key, auto& field) {
    if (auto it = j.find(key); it != j.end()) {
      try {
        field = it->get<std::remove_reference_t<decltype(field)>>();
      } catch (const json::exception& e) {
        fail(ErrorCode::ConfigError, std::string("bad value for '") + key + "': " + e.what());
      }
    }
  };
  take("sampling_budget", c.sampling_budget_N);
  take("initial_rollouts", c.initial_rollouts_M);
  take("branch_top_k", c.branch_top_k);
  take("branches_per_step", c.branches_per_step);
  if (auto it = j.find("region_strategy"); it != j.end()) c.region_strategy = parse_strategy(it->get<std::string>());
  take("max_steps", c.max_steps);
  take("max_generated_tokens", c.max_generated_tokens);
  take("parallelism", c.parallelism_P);
  take("temperature", c.temperature);
  take("rollout_backend", c.rollout_backend);
  take("aggregation_backend", c.aggregation_backend);
  take("seed", c.seed);
}

inline void from_json(const json& j, RunConfig& c) {
  c = RunConfig{};
  merge_run_config(j, c);
}

}  // namespace pmuse
