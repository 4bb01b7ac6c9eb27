#pragma once

/**
 * Rollout engine
 *
 * - rollout(): the think -> tool call -> response loop from scratch.
 * - partial_rollout(): same loop resumed from a parent's prefix. The branch
 *   step itself is regenerated; the prefix (steps before it, with their tool
 *   responses) is resent verbatim as history.
 * - plan_branches() / execute_parallel(): spend the N - M branch budget over
 *   the selected branch points with at most P executions in flight.
 * - CostLedger and the reuse / parallel / speedup formulas over it.
 *
 * Results never depend on completion order: everything is keyed by
 * deterministic ids and sorted before it leaves this module.
 */

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <thread>

#include "pmuse/backends.hpp"
#include "pmuse/uncertainty.hpp"

namespace pmuse {

inline constexpr std::string_view kDefaultSystemPrompt =
    "You are a deep information-seeking agent. Work step by step. In each turn, think inside "
    "<think></think>, then either call exactly one tool inside <tool_call></tool_call> as a JSON "
    "object {\"name\": ..., \"arguments\": {...}}, or give the final answer inside <answer></answer>. "
    "Tools: search (batched web queries, top-10 results each) and visit (fetch urls and extract "
    "what is relevant to a goal).";

/// Everything a rollout needs besides the task and the config.
struct AgentEnvironment {
  std::shared_ptr<ModelBackend> model;
  ToolRegistry tools;
  ToolLimits limits;
  std::string system_prompt = std::string(kDefaultSystemPrompt);
  bool record_wall_time = false;
};

// ---------------------------------------------------------------------------
// Rollout loop
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<Message> history_messages(const AgentEnvironment& env, const std::string& question,
                                             std::span<const Step> steps) {
  std::vector<Message> msgs;
  msgs.push_back({Role::System, env.system_prompt, std::nullopt, {}});
  msgs.push_back({Role::User, question, std::nullopt, {}});
  for (const auto& s : steps) {
    std::string call_id = "call_" + std::to_string(s.index);
    msgs.push_back({Role::Assistant, render_assistant_turn(s), s.tool_call, s.tool_call ? call_id : ""});
    if (s.tool_response) msgs.push_back({Role::Tool, s.tool_response->content, std::nullopt, call_id});
  }
  return msgs;
}

// Turn cut off by the token cap: keep its tokens (they were generated) as
// reasoning, with no tool call and no answer.
inline Step truncated_step(const ModelResponse& resp, std::uint32_t index) {
  Step s;
  s.index = index;
  s.is_terminal = true;
  for (const auto& t : resp.assistant_tokens) {
    if (markers::is_marker(t.text)) continue;
    s.reasoning_tokens.push_back({t.text, detail::require_logprob(t), RegionTag::Reasoning});
  }
  return s;
}

inline SegmentedTurn segment_response(const ModelResponse& resp, std::uint32_t index) {
  bool has_call_markers = std::any_of(resp.assistant_tokens.begin(), resp.assistant_tokens.end(), [](const RawToken& t) {
    return text::trim(t.text) == markers::kCallOpen;
  });
  if (!resp.structured_tool_calls.empty() && !has_call_markers)
    return segment_structured(resp.assistant_tokens, resp.structured_tool_calls.front(), index);
  return segment_step(resp.assistant_tokens, index);
}

/// Drives the loop on `traj`, whose existing steps form the prefix.
inline void continue_rollout(Trajectory& traj, const std::string& question, const RunConfig& config,
                             AgentEnvironment& env) {
  for (const auto& s : traj.steps) {
    traj.generated_token_count += s.generated_tokens();
    if (s.tool_response) traj.prompt_token_count += s.tool_response->token_count;
  }
  traj.prompt_token_count += env.model->count_tokens(env.system_prompt) + env.model->count_tokens(question);

  while (true) {
    if (traj.steps.size() >= config.max_steps) {
      traj.status = TrajectoryStatus::BudgetExhausted;
      traj.error = "step cap reached without a final answer";
      return;
    }
    if (traj.generated_token_count >= config.max_generated_tokens) {
      traj.status = TrajectoryStatus::BudgetExhausted;
      traj.error = "generated-token cap reached without a final answer";
      return;
    }

    ModelRequest req;
    req.messages = history_messages(env, question, traj.steps);
    req.tool_schemas = env.tools.schemas();
    req.temperature = config.temperature;
    req.seed = traj.sampling_seed;
    req.logprobs_required = true;
    req.max_tokens = config.max_generated_tokens - traj.generated_token_count;
    req.purpose = Purpose::Rollout;
    req.subject = traj.id;

    ModelResponse resp = env.model->chat_generate(req);
    auto index = static_cast<std::uint32_t>(traj.steps.size());

    if (resp.finish_reason == FinishReason::Length) {
      Step s = truncated_step(resp, index);
      traj.generated_token_count += s.generated_tokens();
      traj.steps.push_back(std::move(s));
      traj.status = TrajectoryStatus::BudgetExhausted;
      traj.error = "generated-token cap reached mid-turn";
      return;
    }

    SegmentedTurn turn = segment_response(resp, index);
    traj.generated_token_count += turn.step.generated_tokens();
    if (turn.step.is_terminal) {
      traj.final_answer = turn.answer.value_or("");
      traj.steps.push_back(std::move(turn.step));
      traj.status = TrajectoryStatus::Complete;
      return;
    }
    turn.step.tool_response = env.tools.invoke(*turn.step.tool_call, *env.model, env.limits);
    traj.prompt_token_count += turn.step.tool_response->token_count;
    traj.steps.push_back(std::move(turn.step));
  }
}

}  // namespace detail

/// From-scratch rollout. A trajectory that hits the step or token cap comes
/// back with status BudgetExhausted and no final answer; transport failures
/// throw BackendError.
inline Trajectory rollout(const std::string& task_id, const std::string& question, const std::string& trajectory_id,
                          const RunConfig& config, AgentEnvironment& env, std::int64_t seed) {
  Trajectory traj;
  traj.id = trajectory_id;
  traj.task_id = task_id;
  traj.origin = FromScratch{};
  traj.sampling_seed = seed;
  detail::continue_rollout(traj, question, config, env);
  return traj;
}

/// Resumes `parent` at step `t` with a fresh seed. Steps [0, t) are shared
/// verbatim; step t onward is newly sampled.
inline Trajectory partial_rollout(const Trajectory& parent, std::uint32_t t, const std::string& question,
                                  const std::string& branch_id, const RunConfig& config, AgentEnvironment& env,
                                  std::int64_t seed) {
  if (t >= parent.steps.size())
    fail(ErrorCode::InvalidBranchIndex,
         "step " + std::to_string(t) + " is out of range for '" + parent.id + "' (" + std::to_string(parent.steps.size()) +
             " steps)");
  Trajectory traj;
  traj.id = branch_id;
  traj.task_id = parent.task_id;
  traj.origin = Branch{parent.id, t};
  traj.sampling_seed = seed;
  traj.steps.assign(parent.steps.begin(), parent.steps.begin() + t);
  detail::continue_rollout(traj, question, config, env);
  return traj;
}

// ---------------------------------------------------------------------------
// Cost ledger
// ---------------------------------------------------------------------------

struct LedgerRecord {
  std::string branch_id;
  std::string parent_id;  // empty for from-scratch trajectories
  std::uint64_t prefix_tokens = 0;  // p_j
  std::uint64_t suffix_tokens = 0;  // s_j
  std::optional<double> wall_seconds;

  bool from_scratch() const { return parent_id.empty(); }
  bool operator==(const LedgerRecord&) const = default;
};

struct CostLedger {
  std::vector<LedgerRecord> records;
  double hot_cost = 1.0;   // c
  double cold_cost = 1.0;  // c_cold
  std::uint64_t prompt_tokens_total = 0;

  std::uint64_t prefix_total() const {
    std::uint64_t n = 0;
    for (const auto& r : records) n += r.prefix_tokens;
    return n;
  }

  std::uint64_t suffix_total() const {
    std::uint64_t n = 0;
    for (const auto& r : records) n += r.suffix_tokens;
    return n;
  }

  std::size_t branch_count() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return !r.from_scratch(); }));
  }

  void validate_costs() const {
    if (!(hot_cost > 0.0) || !(cold_cost >= hot_cost))
      fail(ErrorCode::InvalidArgument, "ledger costs must satisfy c_cold >= c > 0");
  }

  bool operator==(const CostLedger&) const = default;
};

/// Serialized append point shared by concurrent branch executions.
class LedgerSink {
 public:
  explicit LedgerSink(TokenCosts costs) {
    ledger_.hot_cost = costs.hot;
    ledger_.cold_cost = costs.cold;
    ledger_.validate_costs();
  }

  void append(LedgerRecord record, std::uint64_t prompt_tokens) {
    std::lock_guard lock(mu_);
    ledger_.records.push_back(std::move(record));
    ledger_.prompt_tokens_total += prompt_tokens;
  }

  CostLedger snapshot() const {
    std::lock_guard lock(mu_);
    CostLedger out = ledger_;
    std::sort(out.records.begin(), out.records.end(),
              [](const LedgerRecord& a, const LedgerRecord& b) { return a.branch_id < b.branch_id; });
    return out;
  }

 private:
  mutable std::mutex mu_;
  CostLedger ledger_;
};

inline void to_json(json& j, const LedgerRecord& r) {
  j = json{{"branch_id", r.branch_id},
           {"parent_id", r.parent_id.empty() ? json(nullptr) : json(r.parent_id)},
           {"p", r.prefix_tokens},
           {"s", r.suffix_tokens},
           {"wall_seconds", r.wall_seconds ? json(*r.wall_seconds) : json(nullptr)}};
}

inline void from_json(const json& j, LedgerRecord& r) {
  r.branch_id = j.at("branch_id").get<std::string>();
  r.parent_id = j.at("parent_id").is_null() ? std::string() : j.at("parent_id").get<std::string>();
  r.prefix_tokens = j.at("p").get<std::uint64_t>();
  r.suffix_tokens = j.at("s").get<std::uint64_t>();
  const auto& w = j.value("wall_seconds", json(nullptr));
  r.wall_seconds = w.is_null() ? std::nullopt : std::optional<double>(w.get<double>());
}

inline void to_json(json& j, const CostLedger& l) {
  j = json{{"schema", kSchemaVersion},
           {"records", l.records},
           {"c", l.hot_cost},
           {"c_cold", l.cold_cost},
           {"prompt_tokens_total", l.prompt_tokens_total}};
}

inline void from_json(const json& j, CostLedger& l) {
  l.records = j.at("records").get<std::vector<LedgerRecord>>();
  l.hot_cost = j.at("c").get<double>();
  l.cold_cost = j.at("c_cold").get<double>();
  l.prompt_tokens_total = j.at("prompt_tokens_total").get<std::uint64_t>();
}

/// (c_cold / c) * (1 + sum p / sum s).
inline double reuse_factor(const CostLedger& ledger) {
  ledger.validate_costs();
  auto s = ledger.suffix_total();
  if (s == 0) fail(ErrorCode::ZeroSuffix, "ledger has no newly generated tokens");
  auto p = ledger.prefix_total();
  return (ledger.cold_cost / ledger.hot_cost) * (1.0 + static_cast<double>(p) / static_cast<double>(s));
}

/// Amdahl-type bound 1 / ((1 - alpha) + alpha / P), evaluated as
/// P / ((1 - alpha) P + alpha) so alpha = 1 yields P exactly.
inline double para_factor_bound(double alpha, std::uint32_t parallelism) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
  if (parallelism == 0) fail(ErrorCode::InvalidArgument, "P must be positive");
  double p = static_cast<double>(parallelism);
  return p / ((1.0 - alpha) * p + alpha);
}

struct SpeedupEstimate {
  double simplified = 0.0;  // (1 + sum p / sum s) * P
  double bound = 0.0;       // reuse_factor * para_factor_bound(alpha, P)
};

inline SpeedupEstimate total_speedup_estimate(const CostLedger& ledger, std::uint32_t parallelism, double alpha = 1.0) {
  auto s = ledger.suffix_total();
  if (s == 0) fail(ErrorCode::ZeroSuffix, "ledger has no newly generated tokens");
  if (parallelism == 0) fail(ErrorCode::InvalidArgument, "P must be positive");
  double reuse = 1.0 + static_cast<double>(ledger.prefix_total()) / static_cast<double>(s);
  return {reuse * static_cast<double>(parallelism), reuse_factor(ledger) * para_factor_bound(alpha, parallelism)};
}

// ---------------------------------------------------------------------------
// Branch planning and execution
// ---------------------------------------------------------------------------

struct ResidualAllocation {
  std::string trajectory_id;
  std::uint32_t step_index = 0;
  std::uint32_t extra = 0;

  bool operator==(const ResidualAllocation&) const = default;
};

struct BranchPlan {
  std::vector<BranchPoint> branch_points;  // descending PPL
  std::uint32_t total_branches = 0;
  std::vector<ResidualAllocation> residual_allocation;

  bool operator==(const BranchPlan&) const = default;
};

/// Gives each point `branches_per_step` branches, then reconciles with the
/// N - M budget: leftover budget goes one branch at a time to points in
/// descending PPL order; overshoot is removed from the lowest-PPL point
/// upward. Points left with zero branches are dropped.
inline BranchPlan plan_branches(std::vector<BranchPoint> points, const RunConfig& config) {
  config.validate();
  BranchPlan plan;
  plan.total_branches = config.sampling_budget_N - config.initial_rollouts_M;
  if (plan.total_branches == 0) return plan;
  if (points.empty()) fail(ErrorCode::InsufficientSteps, "no branch points for a non-empty branch budget");

  std::stable_sort(points.begin(), points.end(), [](const BranchPoint& a, const BranchPoint& b) {
    if (a.ppl != b.ppl) return a.ppl > b.ppl;
    return std::tie(a.step_index, a.trajectory_id) < std::tie(b.step_index, b.trajectory_id);
  });
  for (auto& p : points) p.allocated_branches = config.branches_per_step;

  std::uint64_t planned = static_cast<std::uint64_t>(points.size()) * config.branches_per_step;
  if (planned < plan.total_branches) {
    std::vector<std::uint32_t> extra(points.size(), 0);
    for (std::uint64_t left = plan.total_branches - planned, i = 0; left > 0; --left, ++i) {
      ++points[i % points.size()].allocated_branches;
      ++extra[i % points.size()];
    }
    for (std::size_t i = 0; i < points.size(); ++i)
      if (extra[i]) plan.residual_allocation.push_back({points[i].trajectory_id, points[i].step_index, extra[i]});
  } else {
    std::uint64_t excess = planned - plan.total_branches;
    for (auto it = points.rbegin(); it != points.rend() && excess > 0; ++it) {
      auto cut = static_cast<std::uint32_t>(std::min<std::uint64_t>(excess, it->allocated_branches));
      it->allocated_branches -= cut;
      excess -= cut;
    }
    std::erase_if(points, [](const BranchPoint& p) { return p.allocated_branches == 0; });
  }
  plan.branch_points = std::move(points);
  return plan;
}

/// Runs fn(i) for i in [0, n) on at most `parallelism` threads. The first
/// exception thrown by any fn is rethrown after all workers finish.
template <typename Fn>
void parallel_for_bounded(std::size_t n, std::size_t parallelism, Fn&& fn) {
  if (n == 0) return;
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::size_t threads = std::min(n, std::max<std::size_t>(parallelism, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
}

inline std::string initial_trajectory_id(const std::string& task_id, std::uint32_t i) {
  return task_id + "/r" + std::to_string(i);
}

inline std::string branch_trajectory_id(const std::string& parent_id, std::uint32_t step, std::uint32_t ordinal) {
  return parent_id + "/b" + std::to_string(step) + "." + std::to_string(ordinal);
}

/// The M from-scratch rollouts; rollout i uses seed config.seed + i.
inline std::vector<Trajectory> run_initial_rollouts(const std::string& task_id, const std::string& question,
                                                    const RunConfig& config, AgentEnvironment& env) {
  std::vector<Trajectory> out(config.initial_rollouts_M);
  parallel_for_bounded(out.size(), config.parallelism_P, [&](std::size_t i) {
    auto idx = static_cast<std::uint32_t>(i);
    out[i] = rollout(task_id, question, initial_trajectory_id(task_id, idx), config, env, config.seed + idx);
  });
  return out;
}

struct ExecutionResult {
  std::vector<Trajectory> trajectories;  // sorted by id
  CostLedger ledger;
};

/// Executes every planned branch with at most P in flight and returns the M
/// initial plus N - M branch trajectories. Branch g (in plan order) uses seed
/// config.seed + M + g. A failing branch comes back flagged Failed and is
/// left out of the ledger; the call throws only if every branch fails.
inline ExecutionResult execute_parallel(const BranchPlan& plan, std::span<const Trajectory> initial,
                                        const std::string& question, const RunConfig& config, AgentEnvironment& env) {
  struct Job {
    const Trajectory* parent;
    std::uint32_t step;
    std::uint32_t ordinal;
    std::int64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& point : plan.branch_points) {
    auto parent = std::find_if(initial.begin(), initial.end(), [&](const Trajectory& t) { return t.id == point.trajectory_id; });
    if (parent == initial.end()) fail(ErrorCode::InvalidArgument, "branch point references unknown trajectory '" + point.trajectory_id + "'");
    for (std::uint32_t o = 0; o < point.allocated_branches; ++o)
      jobs.push_back({&*parent, point.step_index, o,
                      config.seed + static_cast<std::int64_t>(config.initial_rollouts_M) + static_cast<std::int64_t>(jobs.size())});
  }

  LedgerSink sink(env.model->costs().value_or(TokenCosts{}));
  for (const auto& t : initial) sink.append({t.id, "", 0, t.generated_token_count, std::nullopt}, t.prompt_token_count);

  std::vector<Trajectory> branches(jobs.size());
  std::atomic<std::size_t> failures{0};
  parallel_for_bounded(jobs.size(), config.parallelism_P, [&](std::size_t i) {
    const Job& job = jobs[i];
    std::string id = branch_trajectory_id(job.parent->id, job.step, job.ordinal);
    auto started = std::chrono::steady_clock::now();
    try {
      Trajectory b = partial_rollout(*job.parent, job.step, question, id, config, env, job.seed);
      std::uint64_t p = job.parent->generated_before(job.step);
      std::optional<double> wall;
      if (env.record_wall_time)
        wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      sink.append({id, job.parent->id, p, b.generated_token_count - p, wall}, b.prompt_token_count);
      branches[i] = std::move(b);
    } catch (const Error& e) {
      ++failures;
      Trajectory b;
      b.id = id;
      b.task_id = job.parent->task_id;
      b.origin = Branch{job.parent->id, job.step};
      b.sampling_seed = job.seed;
      b.steps.assign(job.parent->steps.begin(), job.parent->steps.begin() + std::min<std::size_t>(job.step, job.parent->steps.size()));
      b.generated_token_count = job.parent->generated_before(job.step);
      b.status = TrajectoryStatus::Failed;
      b.error = e.what();
      branches[i] = std::move(b);
    }
  });
  if (!jobs.empty() && failures.load() == jobs.size()) fail(ErrorCode::BackendError, "every branch failed");

  ExecutionResult out;
  out.trajectories.assign(initial.begin(), initial.end());
  for (auto& b : branches) out.trajectories.push_back(std::move(b));
  std::sort(out.trajectories.begin(), out.trajectories.end(), [](const Trajectory& a, const Trajectory& b) { return a.id < b.id; });
  out.ledger = sink.snapshot();
  return out;
}

}  // namespace pmuse
