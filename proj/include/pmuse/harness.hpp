#pragma once

/**
 * Run harness: tasks, run configuration, the two-stage pipeline over a task
 * list with a resumable run directory, evaluation, and metrics.
 *
 * Run directory layout:
 *
 *   config.json                  snapshot written on first use
 *   run_record.json              per-task status plus headline metrics
 *   tasks/<dir>/task.json
 *   tasks/<dir>/trajectories.jsonl
 *   tasks/<dir>/plan.json
 *   tasks/<dir>/ledger.json
 *   tasks/<dir>/reports.jsonl
 *   tasks/<dir>/final_answer.json
 *
 * A task directory is assembled under tasks/.tmp-<dir> and renamed into
 * place, so it either exists complete or not at all.
 */

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "pmuse/aggregate.hpp"
#include "pmuse/engine.hpp"

namespace pmuse {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

namespace io {

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::StorageError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::StorageError, "cannot write " + path.string());
  out << content;
  out.flush();
  if (!out) fail(ErrorCode::StorageError, "short write to " + path.string());
}

/// Write to a sibling temp file, then rename over the target.
inline void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  write_file(tmp, content);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::StorageError, "cannot rename into " + path.string() + ": " + ec.message());
}

inline json read_json(const fs::path& path) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::SchemaError, path.string() + " is not valid JSON");
  return j;
}

inline std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> out;
  std::istringstream in(read_file(path));
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (text::trim(line).empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::SchemaError, path.string() + ":" + std::to_string(n) + " is not valid JSON");
    out.push_back(std::move(j));
  }
  return out;
}

template <typename T>
std::string jsonl(const std::vector<T>& items) {
  std::string out;
  for (const auto& item : items) out += json(item).dump() + "\n";
  return out;
}

}  // namespace io

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

struct Task {
  std::string task_id;
  std::string question;
  std::optional<std::string> gold_answer;
  std::optional<std::string> benchmark_tag;

  bool operator==(const Task&) const = default;
};

inline void to_json(json& j, const Task& t) {
  j = json{{"task_id", t.task_id}, {"question", t.question}};
  if (t.gold_answer) j["gold_answer"] = *t.gold_answer;
  if (t.benchmark_tag) j["benchmark_tag"] = *t.benchmark_tag;
}

inline void from_json(const json& j, Task& t) {
  t.task_id = j.at("task_id").get<std::string>();
  t.question = j.at("question").get<std::string>();
  t.gold_answer = j.contains("gold_answer") && !j["gold_answer"].is_null() ? std::optional(j["gold_answer"].get<std::string>()) : std::nullopt;
  t.benchmark_tag = j.contains("benchmark_tag") && !j["benchmark_tag"].is_null() ? std::optional(j["benchmark_tag"].get<std::string>()) : std::nullopt;
}

inline void check_unique_ids(const std::vector<Task>& tasks) {
  std::set<std::string> seen;
  for (const auto& t : tasks) {
    if (t.task_id.empty()) fail(ErrorCode::ConfigError, "task with an empty task_id");
    if (!seen.insert(t.task_id).second) fail(ErrorCode::ConfigError, "duplicate task_id '" + t.task_id + "'");
  }
}

inline std::vector<Task> load_tasks(const fs::path& path) {
  std::vector<Task> tasks;
  try {
    for (const auto& j : io::read_jsonl(path)) tasks.push_back(j.get<Task>());
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, "bad task record in " + path.string() + ": " + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::ConfigError, e.what());
  }
  check_unique_ids(tasks);
  return tasks;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct HarnessConfig {
  RunConfig run;
  // name -> {"type": "scripted", "scenario_dir", "scenario_id"} or
  //         {"type": "http", "base_url", "model", ...}
  json backends = json::object();
  json search = json{{"type", "scripted"}};
  json visit = json{{"type", "scripted"}};
  std::uint64_t tool_response_token_cap = 4096;
  std::uint64_t aggregation_context_tokens = 131072;
  std::string prompts_dir;
  std::uint32_t task_parallelism = 1;
  std::size_t max_inflight_calls = 0;  // 0 = unbounded
  bool record_wall_time = false;

  void validate() const {
    run.validate();
    if (task_parallelism == 0) fail(ErrorCode::ConfigError, "task_parallelism must be positive");
    if (tool_response_token_cap == 0) fail(ErrorCode::ConfigError, "tool_response_token_cap must be positive");
    for (const auto* name : {&run.rollout_backend, &run.aggregation_backend})
      if (!backends.contains(*name)) fail(ErrorCode::ConfigError, "backend '" + *name + "' is not configured");
  }
};

inline void to_json(json& j, const HarnessConfig& c) {
  j = json(c.run);
  j["backends"] = c.backends;
  j["search"] = c.search;
  j["visit"] = c.visit;
  j["tool_response_token_cap"] = c.tool_response_token_cap;
  j["aggregation_context_tokens"] = c.aggregation_context_tokens;
  j["prompts_dir"] = c.prompts_dir;
  j["task_parallelism"] = c.task_parallelism;
  j["max_inflight_calls"] = c.max_inflight_calls;
  j["record_wall_time"] = c.record_wall_time;
}

/// Keys present in `j` override the values already in `c`.
inline void merge_harness_config(const json& j, HarnessConfig& c) {
  if (!j.is_object()) fail(ErrorCode::ConfigError, "config must be a JSON object");
  merge_run_config(j, c.run);
  try {
    if (auto b = j.find("backends"); b != j.end())
      for (const auto& [name, spec] : b->items()) c.backends[name] = spec;
    if (j.contains("search")) c.search = j["search"];
    if (j.contains("visit")) c.visit = j["visit"];
    c.tool_response_token_cap = j.value("tool_response_token_cap", c.tool_response_token_cap);
    c.aggregation_context_tokens = j.value("aggregation_context_tokens", c.aggregation_context_tokens);
    c.prompts_dir = j.value("prompts_dir", c.prompts_dir);
    c.task_parallelism = j.value("task_parallelism", c.task_parallelism);
    c.max_inflight_calls = j.value("max_inflight_calls", c.max_inflight_calls);
    c.record_wall_time = j.value("record_wall_time", c.record_wall_time);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("bad config value: ") + e.what());
  }
}

inline HarnessConfig load_harness_config(const fs::path& path) {
  HarnessConfig c;
  json j = json::parse(io::read_file(path), nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::ConfigError, path.string() + " is not valid JSON");
  merge_harness_config(j, c);
  return c;
}

/// Everything run_pipeline talks to. `rollout` and `aggregation` may be the
/// same object.
struct Backends {
  std::shared_ptr<ModelBackend> rollout;
  std::shared_ptr<ModelBackend> aggregation;
  std::shared_ptr<SearchBackend> search;
  std::shared_ptr<VisitBackend> visit;
};

// ---------------------------------------------------------------------------
// Per-task pipeline
// ---------------------------------------------------------------------------

struct TaskResult {
  Task task;
  std::vector<Trajectory> trajectories;  // sorted by id
  BranchPlan plan;
  CostLedger ledger;
  std::vector<Report> reports;  // same order as trajectories
  FinalAnswer final_answer;
};

inline void to_json(json& j, const BranchPoint& p) {
  j = json{{"trajectory_id", p.trajectory_id},
           {"step_index", p.step_index},
           {"region", to_string(p.region)},
           {"ppl", p.ppl},
           {"allocated_branches", p.allocated_branches}};
}

inline void from_json(const json& j, BranchPoint& p) {
  p.trajectory_id = j.at("trajectory_id").get<std::string>();
  p.step_index = j.at("step_index").get<std::uint32_t>();
  p.region = parse_region(j.at("region").get<std::string>());
  p.ppl = j.at("ppl").get<double>();
  p.allocated_branches = j.at("allocated_branches").get<std::uint32_t>();
}

inline void to_json(json& j, const BranchPlan& p) {
  json residual = json::array();
  for (const auto& r : p.residual_allocation)
    residual.push_back({{"trajectory_id", r.trajectory_id}, {"step_index", r.step_index}, {"extra", r.extra}});
  j = json{{"schema", kSchemaVersion}, {"branch_points", p.branch_points}, {"total_branches", p.total_branches}, {"residual_allocation", residual}};
}

inline void from_json(const json& j, BranchPlan& p) {
  p.branch_points = j.at("branch_points").get<std::vector<BranchPoint>>();
  p.total_branches = j.at("total_branches").get<std::uint32_t>();
  p.residual_allocation.clear();
  for (const auto& r : j.value("residual_allocation", json::array()))
    p.residual_allocation.push_back({r.at("trajectory_id").get<std::string>(), r.at("step_index").get<std::uint32_t>(),
                                     r.at("extra").get<std::uint32_t>()});
}

inline AgentEnvironment make_environment(const HarnessConfig& config, const Backends& backends) {
  AgentEnvironment env;
  env.model = backends.rollout;
  env.tools = make_standard_tools(backends.search, backends.visit);
  env.limits.response_token_cap = config.tool_response_token_cap;
  env.record_wall_time = config.record_wall_time;
  return env;
}

/// Stage one then stage two for one task, in memory.
inline TaskResult solve_task(const Task& task, const HarnessConfig& config, const Backends& backends,
                             const PromptSet& prompts) {
  const RunConfig& rc = config.run;
  AgentEnvironment env = make_environment(config, backends);

  TaskResult out;
  out.task = task;
  auto initial = run_initial_rollouts(task.task_id, task.question, rc, env);
  std::vector<BranchPoint> points;
  if (rc.sampling_budget_N > rc.initial_rollouts_M)
    points = select_branch_points(initial, rc.region_strategy, rc.branch_top_k);
  out.plan = plan_branches(points, rc);
  auto exec = execute_parallel(out.plan, initial, task.question, rc, env);
  out.trajectories = std::move(exec.trajectories);
  out.ledger = std::move(exec.ledger);

  out.reports.resize(out.trajectories.size());
  parallel_for_bounded(out.trajectories.size(), rc.parallelism_P, [&](std::size_t i) {
    out.reports[i] = compress_trajectory(out.trajectories[i], task.question, *backends.aggregation, prompts);
  });
  out.final_answer = aggregate_reports(task.question, out.reports, *backends.aggregation, prompts,
                                       {config.aggregation_context_tokens, 3});
  return out;
}

// ---------------------------------------------------------------------------
// Run directory
// ---------------------------------------------------------------------------

inline constexpr const char* kTaskArtifacts[] = {"task.json",    "trajectories.jsonl", "plan.json",
                                                 "ledger.json", "reports.jsonl",      "final_answer.json"};

/// Directory name for a task id: the id itself when it is filesystem-safe,
/// else a sanitized form with a hash suffix.
inline std::string task_dir_name(const std::string& task_id) {
  std::string safe;
  for (char c : task_id) safe += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ? c : '_';
  if (safe == task_id && !safe.empty() && safe[0] != '.') return safe;
  return safe + "-" + text::hex64(text::fnv1a(task_id)).substr(0, 8);
}

inline bool task_complete(const fs::path& task_dir) {
  for (const char* f : kTaskArtifacts)
    if (!fs::exists(task_dir / f)) return false;
  return true;
}

inline void write_task_artifacts(const fs::path& run_dir, const TaskResult& r) {
  fs::path tasks = run_dir / "tasks";
  std::string name = task_dir_name(r.task.task_id);
  fs::path tmp = tasks / (".tmp-" + name);
  fs::path dest = tasks / name;
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp, ec);
  if (ec) fail(ErrorCode::StorageError, "cannot create " + tmp.string() + ": " + ec.message());
  io::write_file(tmp / "task.json", json(r.task).dump(2) + "\n");
  io::write_file(tmp / "trajectories.jsonl", io::jsonl(r.trajectories));
  io::write_file(tmp / "plan.json", json(r.plan).dump(2) + "\n");
  io::write_file(tmp / "ledger.json", json(r.ledger).dump(2) + "\n");
  io::write_file(tmp / "reports.jsonl", io::jsonl(r.reports));
  io::write_file(tmp / "final_answer.json", json(r.final_answer).dump(2) + "\n");
  // A damaged directory from an earlier run (missing artifacts) is replaced.
  if (fs::exists(dest) && !task_complete(dest)) fs::remove_all(dest, ec);
  fs::rename(tmp, dest, ec);
  if (ec) fail(ErrorCode::StorageError, "cannot move " + tmp.string() + " into place: " + ec.message());
}

struct TaskArtifacts {
  Task task;
  std::vector<Trajectory> trajectories;
  BranchPlan plan;
  CostLedger ledger;
  std::vector<Report> reports;
  FinalAnswer final_answer;
};

inline TaskArtifacts load_task_artifacts(const fs::path& task_dir) {
  if (!task_complete(task_dir)) fail(ErrorCode::IncompleteRun, task_dir.string() + " is missing artifacts");
  TaskArtifacts a;
  try {
    a.task = io::read_json(task_dir / "task.json").get<Task>();
    for (const auto& j : io::read_jsonl(task_dir / "trajectories.jsonl")) a.trajectories.push_back(j.get<Trajectory>());
    a.plan = io::read_json(task_dir / "plan.json").get<BranchPlan>();
    a.ledger = io::read_json(task_dir / "ledger.json").get<CostLedger>();
    for (const auto& j : io::read_jsonl(task_dir / "reports.jsonl")) a.reports.push_back(j.get<Report>());
    a.final_answer = io::read_json(task_dir / "final_answer.json").get<FinalAnswer>();
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, task_dir.string() + ": " + e.what());
  }
  return a;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct SavingsRow {
  std::string task_id;
  std::string trajectory_id;
  std::string parent_id;
  std::uint64_t prefix_tokens = 0;
  std::uint64_t partial_tokens = 0;         // s_j
  std::uint64_t from_scratch_tokens = 0;    // p_j + s_j
};

struct CompressionRow {
  std::string task_id;
  std::string trajectory_id;
  std::uint64_t context_tokens = 0;
  std::uint64_t report_tokens = 0;
  bool degraded = false;
  double ratio() const { return context_tokens ? static_cast<double>(report_tokens) / static_cast<double>(context_tokens) : 0.0; }
};

struct LedgerRow {
  std::string task_id;  // "all" for the pooled row
  std::uint64_t prefix_total = 0;
  std::uint64_t suffix_total = 0;
  std::optional<double> reuse_factor;
  double para_factor_bound = 0.0;
  std::optional<SpeedupEstimate> speedup;
};

struct RunMetrics {
  std::optional<double> pass_rate;  // SingleAnswer, exact match; null without gold answers
  std::uint64_t tokens_generated = 0;  // sum s_j
  std::uint64_t tokens_saved = 0;      // sum p_j
  std::optional<double> reuse_factor;
  std::optional<double> compression_ratio;  // sum report tokens / sum context tokens

  bool operator==(const RunMetrics&) const = default;
};

inline json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline void to_json(json& j, const RunMetrics& m) {
  j = json{{"pass_rate", optional_json(m.pass_rate)},
           {"tokens_generated", m.tokens_generated},
           {"tokens_saved", m.tokens_saved},
           {"reuse_factor", optional_json(m.reuse_factor)},
           {"compression_ratio", optional_json(m.compression_ratio)}};
}

inline void from_json(const json& j, RunMetrics& m) {
  auto opt = [&](const char* k) { return j.at(k).is_null() ? std::nullopt : std::optional<double>(j.at(k).get<double>()); };
  m.pass_rate = opt("pass_rate");
  m.tokens_generated = j.at("tokens_generated").get<std::uint64_t>();
  m.tokens_saved = j.at("tokens_saved").get<std::uint64_t>();
  m.reuse_factor = opt("reuse_factor");
  m.compression_ratio = opt("compression_ratio");
}

struct MetricsTables {
  std::vector<SavingsRow> savings;
  double savings_ratio = 1.0;  // sum partial / sum from-scratch
  std::vector<CompressionRow> compression;
  std::vector<LedgerRow> ledger;
  RunMetrics metrics;

  double token_reduction() const { return 1.0 - savings_ratio; }
};

inline LedgerRow ledger_row(const std::string& task_id, const CostLedger& l, std::uint32_t parallelism) {
  LedgerRow row;
  row.task_id = task_id;
  row.prefix_total = l.prefix_total();
  row.suffix_total = l.suffix_total();
  row.para_factor_bound = para_factor_bound(1.0, parallelism);
  if (row.suffix_total > 0) {
    row.reuse_factor = reuse_factor(l);
    row.speedup = total_speedup_estimate(l, parallelism, 1.0);
  }
  return row;
}

/// Pure function of loaded artifacts; both run_pipeline and emit_metrics go
/// through it so the numbers agree bit for bit.
inline MetricsTables compute_metrics(const std::vector<TaskArtifacts>& tasks, std::uint32_t parallelism) {
  MetricsTables m;
  CostLedger pooled;
  bool first = true;
  std::uint64_t partial = 0, scratch = 0, report_tokens = 0, context_tokens = 0;
  std::size_t graded = 0, passed = 0;
  for (const auto& t : tasks) {
    if (first) {
      pooled.hot_cost = t.ledger.hot_cost;
      pooled.cold_cost = t.ledger.cold_cost;
      first = false;
    }
    for (const auto& r : t.ledger.records) {
      pooled.records.push_back(r);
      partial += r.suffix_tokens;
      scratch += r.prefix_tokens + r.suffix_tokens;
      if (!r.from_scratch())
        m.savings.push_back({t.task.task_id, r.branch_id, r.parent_id, r.prefix_tokens, r.suffix_tokens, r.prefix_tokens + r.suffix_tokens});
    }
    pooled.prompt_tokens_total += t.ledger.prompt_tokens_total;
    m.ledger.push_back(ledger_row(t.task.task_id, t.ledger, parallelism));

    std::map<std::string, const Trajectory*> by_id;
    for (const auto& tr : t.trajectories) by_id[tr.id] = &tr;
    for (const auto& r : t.reports) {
      auto it = by_id.find(r.trajectory_id);
      std::uint64_t ctx = it == by_id.end() ? 0 : it->second->context_tokens();
      m.compression.push_back({t.task.task_id, r.trajectory_id, ctx, r.compressed_token_count, r.degraded});
      report_tokens += r.compressed_token_count;
      context_tokens += ctx;
    }
    if (t.task.gold_answer) {
      ++graded;
      passed += text::canonical_answer(*t.task.gold_answer) == text::canonical_answer(t.final_answer.answer);
    }
  }
  m.savings_ratio = scratch ? static_cast<double>(partial) / static_cast<double>(scratch) : 1.0;
  if (!tasks.empty()) m.ledger.push_back(ledger_row("all", pooled, parallelism));
  m.metrics.tokens_generated = pooled.suffix_total();
  m.metrics.tokens_saved = pooled.prefix_total();
  if (pooled.suffix_total() > 0) m.metrics.reuse_factor = reuse_factor(pooled);
  if (context_tokens > 0) m.metrics.compression_ratio = static_cast<double>(report_tokens) / static_cast<double>(context_tokens);
  if (graded > 0) m.metrics.pass_rate = static_cast<double>(passed) / static_cast<double>(graded);
  return m;
}

// ---------------------------------------------------------------------------
// run_pipeline
// ---------------------------------------------------------------------------

struct TaskStatus {
  std::string task_id;
  std::string path;  // relative to the run directory
  bool complete = false;
  std::string error;
};

struct RunRecord {
  std::string run_id;
  json config;
  std::vector<TaskStatus> tasks;
  RunMetrics metrics;
};

inline void to_json(json& j, const RunRecord& r) {
  json tasks = json::array();
  for (const auto& t : r.tasks)
    tasks.push_back({{"task_id", t.task_id},
                     {"path", t.path},
                     {"status", t.complete ? "complete" : "failed"},
                     {"error", t.error.empty() ? json(nullptr) : json(t.error)}});
  j = json{{"schema", kSchemaVersion}, {"run_id", r.run_id}, {"config", r.config}, {"tasks", tasks}, {"metrics", r.metrics}};
}

inline void from_json(const json& j, RunRecord& r) {
  r.run_id = j.at("run_id").get<std::string>();
  r.config = j.at("config");
  r.tasks.clear();
  for (const auto& t : j.at("tasks"))
    r.tasks.push_back({t.at("task_id").get<std::string>(), t.at("path").get<std::string>(), t.at("status") == "complete",
                       t.at("error").is_null() ? std::string() : t.at("error").get<std::string>()});
  r.metrics = j.at("metrics").get<RunMetrics>();
}

namespace detail {

// Settings that may change between a run and its resume without changing
// any artifact.
inline json result_relevant(json config) {
  for (const char* k : {"parallelism", "task_parallelism", "max_inflight_calls"}) config.erase(k);
  return config;
}

inline json snapshot_config(const fs::path& run_dir, const HarnessConfig& config) {
  json snap = config;
  fs::path path = run_dir / "config.json";
  if (fs::exists(path)) {
    json prior = io::read_json(path);
    if (result_relevant(prior) != result_relevant(snap))
      fail(ErrorCode::ConfigError, "run directory " + run_dir.string() + " was created with a different configuration");
    return prior;
  }
  io::write_file_atomic(path, snap.dump(2) + "\n");
  return snap;
}

}  // namespace detail

inline RunRecord run_pipeline(const std::vector<Task>& tasks, const HarnessConfig& config, const Backends& backends,
                              const fs::path& run_dir, std::ostream* log = nullptr) {
  config.validate();
  check_unique_ids(tasks);
  std::error_code ec;
  fs::create_directories(run_dir / "tasks", ec);
  if (ec) fail(ErrorCode::StorageError, "cannot create run directory " + run_dir.string() + ": " + ec.message());

  RunRecord record;
  record.config = detail::snapshot_config(run_dir, config);
  record.run_id = text::hex64(text::fnv1a(detail::result_relevant(record.config).dump()));

  PromptSet prompts;
  if (!config.prompts_dir.empty()) prompts.override_from(config.prompts_dir);

  record.tasks.resize(tasks.size());
  std::mutex log_mu;
  parallel_for_bounded(tasks.size(), config.task_parallelism, [&](std::size_t i) {
    const Task& task = tasks[i];
    std::string name = task_dir_name(task.task_id);
    TaskStatus& status = record.tasks[i];
    status.task_id = task.task_id;
    status.path = "tasks/" + name;
    if (task_complete(run_dir / "tasks" / name)) {
      status.complete = true;
      return;
    }
    try {
      write_task_artifacts(run_dir, solve_task(task, config, backends, prompts));
      status.complete = true;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ConfigError || e.code() == ErrorCode::StorageError) throw;
      status.error = std::string(to_string(e.code())) + ": " + e.what();
      if (log) {
        std::lock_guard lock(log_mu);
        *log << "task " << task.task_id << " failed: " << status.error << "\n";
      }
    }
  });

  std::vector<TaskArtifacts> done;
  for (const auto& s : record.tasks)
    if (s.complete) done.push_back(load_task_artifacts(run_dir / s.path));
  record.metrics = compute_metrics(done, config.run.parallelism_P).metrics;
  io::write_file_atomic(run_dir / "run_record.json", json(record).dump(2) + "\n");
  return record;
}

inline RunRecord load_run_record(const fs::path& run_dir) {
  fs::path path = run_dir / "run_record.json";
  if (!fs::exists(path)) fail(ErrorCode::IncompleteRun, run_dir.string() + " has no run_record.json");
  try {
    return io::read_json(path).get<RunRecord>();
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, path.string() + ": " + e.what());
  }
}

/// Loads every task of a finished run; IncompleteRun if any task failed or
/// lost artifacts.
inline std::vector<TaskArtifacts> load_run(const fs::path& run_dir) {
  RunRecord record = load_run_record(run_dir);
  std::vector<TaskArtifacts> out;
  for (const auto& t : record.tasks) {
    if (!t.complete) fail(ErrorCode::IncompleteRun, "task '" + t.task_id + "' did not complete: " + t.error);
    out.push_back(load_task_artifacts(run_dir / t.path));
  }
  return out;
}

inline MetricsTables emit_metrics(const fs::path& run_dir) {
  RunRecord record = load_run_record(run_dir);
  RunConfig rc = record.config.get<RunConfig>();
  return compute_metrics(load_run(run_dir), rc.parallelism_P);
}

// ---------------------------------------------------------------------------
// Metric renderings
// ---------------------------------------------------------------------------

namespace detail {

inline std::string opt_real(const std::optional<double>& v) { return v ? text::format_real(*v) : ""; }

inline std::string align(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (width.size() <= i) width.push_back(0);
      width[i] = std::max(width[i], r[i].size());
    }
  std::string out;
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < r.size(); ++i) {
      line += r[i];
      if (i + 1 < r.size()) line += std::string(width[i] - r[i].size() + 2, ' ');
    }
    out += line + "\n";
  }
  return out;
}

inline std::string csv(const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      const std::string& cell = r[i];
      bool quote = cell.find_first_of(",\"\n") != std::string::npos;
      if (i) out += ',';
      if (!quote) {
        out += cell;
        continue;
      }
      out += '"';
      for (char c : cell) out += c == '"' ? std::string("\"\"") : std::string(1, c);
      out += '"';
    }
    out += "\n";
  }
  return out;
}

}  // namespace detail

struct RenderedTables {
  std::vector<std::vector<std::string>> savings;
  std::vector<std::vector<std::string>> compression;
  std::vector<std::vector<std::string>> ledger;
  std::vector<std::vector<std::string>> summary;
};

inline RenderedTables table_rows(const MetricsTables& m) {
  RenderedTables t;
  t.savings.push_back({"task_id", "trajectory_id", "parent_id", "p", "partial_tokens", "from_scratch_tokens", "ratio"});
  for (const auto& r : m.savings)
    t.savings.push_back({r.task_id, r.trajectory_id, r.parent_id, std::to_string(r.prefix_tokens), std::to_string(r.partial_tokens),
                         std::to_string(r.from_scratch_tokens),
                         text::format_real(r.from_scratch_tokens ? static_cast<double>(r.partial_tokens) / static_cast<double>(r.from_scratch_tokens) : 1.0)});
  t.savings.push_back({"total", "", "", "", "", "", text::format_real(m.savings_ratio)});

  t.compression.push_back({"task_id", "trajectory_id", "context_tokens", "report_tokens", "ratio", "degraded"});
  for (const auto& r : m.compression)
    t.compression.push_back({r.task_id, r.trajectory_id, std::to_string(r.context_tokens), std::to_string(r.report_tokens),
                             text::format_real(r.ratio()), r.degraded ? "true" : "false"});

  t.ledger.push_back({"task_id", "sum_p", "sum_s", "reuse_factor", "para_factor_bound", "speedup_simplified", "speedup_bound"});
  for (const auto& r : m.ledger)
    t.ledger.push_back({r.task_id, std::to_string(r.prefix_total), std::to_string(r.suffix_total), detail::opt_real(r.reuse_factor),
                        text::format_real(r.para_factor_bound), r.speedup ? text::format_real(r.speedup->simplified) : "",
                        r.speedup ? text::format_real(r.speedup->bound) : ""});

  t.summary.push_back({"metric", "value"});
  t.summary.push_back({"pass_rate", detail::opt_real(m.metrics.pass_rate)});
  t.summary.push_back({"tokens_generated", std::to_string(m.metrics.tokens_generated)});
  t.summary.push_back({"tokens_saved", std::to_string(m.metrics.tokens_saved)});
  t.summary.push_back({"token_reduction", text::format_real(m.token_reduction())});
  t.summary.push_back({"reuse_factor", detail::opt_real(m.metrics.reuse_factor)});
  t.summary.push_back({"compression_ratio", detail::opt_real(m.metrics.compression_ratio)});
  return t;
}

inline std::string render_text(const MetricsTables& m) {
  auto t = table_rows(m);
  return "== token savings ==\n" + detail::align(t.savings) + "\n== compression ==\n" + detail::align(t.compression) +
         "\n== ledger ==\n" + detail::align(t.ledger) + "\n== summary ==\n" + detail::align(t.summary);
}

/// Writes savings.csv, compression.csv, ledger.csv and summary.csv to `dir`.
inline void write_csv(const MetricsTables& m, const fs::path& dir) {
  auto t = table_rows(m);
  fs::create_directories(dir);
  io::write_file(dir / "savings.csv", detail::csv(t.savings));
  io::write_file(dir / "compression.csv", detail::csv(t.compression));
  io::write_file(dir / "ledger.csv", detail::csv(t.ledger));
  io::write_file(dir / "summary.csv", detail::csv(t.summary));
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

enum class EvalMode { NoScaling, SingleAnswer };

inline std::string_view to_string(EvalMode m) { return m == EvalMode::NoScaling ? "no_scaling" : "single_answer"; }

inline EvalMode parse_eval_mode(std::string_view s) {
  if (s == "no_scaling" || s == "noscaling") return EvalMode::NoScaling;
  if (s == "single_answer" || s == "single") return EvalMode::SingleAnswer;
  fail(ErrorCode::ConfigError, "unknown evaluation mode '" + std::string(s) + "'");
}

class Judge {
 public:
  virtual ~Judge() = default;
  virtual bool accepts(const Task& task, const std::string& prediction) = 0;
};

class ExactMatchJudge : public Judge {
 public:
  bool accepts(const Task& task, const std::string& prediction) override {
    return task.gold_answer && text::canonical_answer(*task.gold_answer) == text::canonical_answer(prediction);
  }
};

/// Asks a model whether a prediction matches the gold answer. The prompt is
/// supplied by the caller (placeholders {question} {gold} {prediction}); the
/// reply is accepted when it starts with "yes" or "correct".
class ModelJudge : public Judge {
 public:
  ModelJudge(std::shared_ptr<ModelBackend> backend, std::string prompt_template)
      : backend_(std::move(backend)), template_(std::move(prompt_template)) {}

  bool accepts(const Task& task, const std::string& prediction) override {
    if (!task.gold_answer) return false;
    std::map<std::string, std::string, std::less<>> vars{{"question", task.question}, {"gold", *task.gold_answer}, {"prediction", prediction}};
    ModelRequest req;
    req.purpose = Purpose::Judge;
    req.subject = json{{"gold", *task.gold_answer}, {"prediction", prediction}}.dump();
    req.logprobs_required = false;
    req.max_tokens = 256;
    req.messages.push_back({Role::User, detail::fill(template_, vars), std::nullopt, {}});
    auto reply = text::canonical_answer(backend_->chat_generate(req).text());
    return text::starts_with(reply, "yes") || text::starts_with(reply, "correct");
  }

 private:
  std::shared_ptr<ModelBackend> backend_;
  std::string template_;
};

struct TaskScore {
  std::string task_id;
  double score = 0.0;
  std::size_t accepted = 0;
  std::size_t total = 0;
};

struct EvalReport {
  EvalMode mode = EvalMode::SingleAnswer;
  double pass_rate = 0.0;
  std::vector<TaskScore> per_task;
};

inline void to_json(json& j, const EvalReport& r) {
  json tasks = json::array();
  for (const auto& t : r.per_task)
    tasks.push_back({{"task_id", t.task_id}, {"score", t.score}, {"accepted", t.accepted}, {"total", t.total}});
  j = json{{"mode", to_string(r.mode)}, {"pass_rate", r.pass_rate}, {"per_task", tasks}};
}

/// Per-task candidate answers. NoScaling reads all N of them (a missing
/// answer counts as wrong); SingleAnswer reads exactly one.
using Predictions = std::map<std::string, std::vector<std::optional<std::string>>>;

inline EvalReport evaluate(const Predictions& predictions, const std::vector<Task>& tasks, Judge& judge, EvalMode mode) {
  std::set<std::string> task_ids;
  for (const auto& t : tasks) task_ids.insert(t.task_id);
  for (const auto& [id, _] : predictions)
    if (!task_ids.count(id)) fail(ErrorCode::IdMismatch, "prediction for unknown task '" + id + "'");
  if (predictions.size() != task_ids.size()) {
    for (const auto& id : task_ids)
      if (!predictions.count(id)) fail(ErrorCode::IdMismatch, "no prediction for task '" + id + "'");
  }
  if (tasks.empty()) fail(ErrorCode::InvalidArgument, "nothing to evaluate");

  EvalReport report;
  report.mode = mode;
  double sum = 0.0;
  for (const auto& task : tasks) {
    if (!task.gold_answer) fail(ErrorCode::InvalidArgument, "task '" + task.task_id + "' has no gold answer");
    const auto& answers = predictions.at(task.task_id);
    if (answers.empty()) fail(ErrorCode::IdMismatch, "task '" + task.task_id + "' has no predictions");
    if (mode == EvalMode::SingleAnswer && answers.size() != 1)
      fail(ErrorCode::InvalidArgument, "single-answer evaluation needs exactly one prediction per task");
    TaskScore s{task.task_id, 0.0, 0, answers.size()};
    for (const auto& a : answers) s.accepted += a && judge.accepts(task, *a);
    s.score = static_cast<double>(s.accepted) / static_cast<double>(s.total);
    sum += s.score;
    report.per_task.push_back(s);
  }
  report.pass_rate = sum / static_cast<double>(tasks.size());
  return report;
}

/// Evaluates a finished run directory against `tasks`.
inline EvalReport evaluate_run(const fs::path& run_dir, const std::vector<Task>& tasks, Judge& judge, EvalMode mode) {
  Predictions preds;
  for (const auto& a : load_run(run_dir)) {
    auto& list = preds[a.task.task_id];
    if (mode == EvalMode::SingleAnswer) {
      list.push_back(a.final_answer.answer);
    } else {
      for (const auto& t : a.trajectories) list.push_back(t.final_answer);
    }
  }
  return evaluate(preds, tasks, judge, mode);
}

}  // namespace pmuse
