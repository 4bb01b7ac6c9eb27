// pmuse: command-line front end for rollouts, branching, compression,
// aggregation, voting and run analysis.
//
// Exit codes: 0 success, 1 run failure, 2 configuration or usage error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "pmuse/setup.hpp"

namespace {

using namespace pmuse;

constexpr int kOk = 0;
constexpr int kRunFailure = 1;
constexpr int kConfigError = 2;

// Global options. Every run-config flag is optional so that unset flags
// leave file values alone.
struct GlobalOptions {
  std::string config_path;
  std::string scenario_dir = "scenarios";
  std::string scenario_id;
  std::optional<std::uint32_t> sampling_budget, initial_rollouts, branch_top_k, branches_per_step, max_steps, parallelism;
  std::optional<std::uint64_t> max_generated_tokens, seed;
  std::optional<double> temperature;
  std::optional<std::string> strategy;
};

HarnessConfig build_config(const GlobalOptions& g) {
  HarnessConfig c;
  if (!g.config_path.empty()) c = load_harness_config(g.config_path);
  json flags = json::object();
  if (!g.scenario_id.empty())
    flags["backends"]["default"] = {{"type", "scripted"}, {"scenario_dir", g.scenario_dir}, {"scenario_id", g.scenario_id}};
  auto put = [&](const char* key, const auto& v) {
    if (v) flags[key] = *v;
  };
  put("sampling_budget", g.sampling_budget);
  put("initial_rollouts", g.initial_rollouts);
  put("branch_top_k", g.branch_top_k);
  put("branches_per_step", g.branches_per_step);
  put("max_steps", g.max_steps);
  put("parallelism", g.parallelism);
  put("max_generated_tokens", g.max_generated_tokens);
  put("seed", g.seed);
  put("temperature", g.temperature);
  put("region_strategy", g.strategy);
  merge_harness_config(flags, c);
  return c;
}

// Backends plus the pieces the subcommands need from them.
struct Session {
  HarnessConfig config;
  BackendPool pool;
  Backends backends;
  PromptSet prompts;

  explicit Session(const GlobalOptions& g) : config(build_config(g)) {
    backends = make_backends(config, &pool);
    if (!config.prompts_dir.empty()) prompts.override_from(config.prompts_dir);
  }

  AgentEnvironment env() const { return make_environment(config, backends); }

  // Tasks from --tasks, else from the scenario behind the rollout backend.
  std::vector<Task> tasks(const std::string& path) const {
    if (!path.empty()) return load_tasks(path);
    auto it = pool.scenarios.find(config.run.rollout_backend);
    if (it == pool.scenarios.end()) fail(ErrorCode::ConfigError, "no --tasks file given and the rollout backend is not scripted");
    std::vector<Task> out;
    for (const auto& t : it->second->tasks()) out.push_back(t.get<Task>());
    check_unique_ids(out);
    return out;
  }
};

// Output sink: a file when a path is given, else stdout.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (path.empty() || path == "-") return;
    file_.open(path, std::ios::binary | std::ios::trunc);
    if (!file_) fail(ErrorCode::StorageError, "cannot open " + path + " for writing");
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

std::vector<Trajectory> read_trajectories(const std::string& path) {
  std::vector<Trajectory> out;
  for (const auto& j : io::read_jsonl(path)) out.push_back(j.get<Trajectory>());
  return out;
}

// Trajectories grouped by task, keeping first-seen order of tasks.
std::vector<std::pair<std::string, std::vector<Trajectory>>> by_task(std::vector<Trajectory> all) {
  std::vector<std::pair<std::string, std::vector<Trajectory>>> groups;
  std::map<std::string, std::size_t> index;
  for (auto& t : all) {
    auto [it, fresh] = index.emplace(t.task_id, groups.size());
    if (fresh) groups.push_back({t.task_id, {}});
    groups[it->second].second.push_back(std::move(t));
  }
  return groups;
}

// Question text for a task id: --question wins, else the task source.
struct QuestionLookup {
  std::string fixed;
  std::map<std::string, std::string> by_id;

  std::string operator()(const std::string& task_id) const {
    if (!fixed.empty()) return fixed;
    auto it = by_id.find(task_id);
    if (it == by_id.end()) fail(ErrorCode::ConfigError, "no question known for task '" + task_id + "'; pass --question or --tasks");
    return it->second;
  }
};

QuestionLookup questions(const Session& s, const std::string& question, const std::string& tasks_path) {
  QuestionLookup q;
  q.fixed = question;
  if (question.empty())
    for (const auto& t : s.tasks(tasks_path)) q.by_id[t.task_id] = t.question;
  return q;
}

std::string ppl_cell(const std::optional<double>& v) { return v ? text::format_real(*v) : ""; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partial-rollout search agent with compressed report aggregation"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--scenario-dir", g.scenario_dir, "Directory of scripted scenarios");
  app.add_option("--scenario", g.scenario_id, "Use the scripted scenario with this id as the default backend");
  app.add_option("--sampling-budget", g.sampling_budget, "Total trajectories per task (N)");
  app.add_option("--initial-rollouts", g.initial_rollouts, "From-scratch rollouts per task (M)");
  app.add_option("--top-k", g.branch_top_k, "Branch points per task");
  app.add_option("--branches-per-step", g.branches_per_step, "Branches launched per branch point");
  app.add_option("--strategy", g.strategy, "reasoning | exploration | mixed");
  app.add_option("--max-steps", g.max_steps, "Step cap per trajectory");
  app.add_option("--max-tokens", g.max_generated_tokens, "Generated-token cap per trajectory");
  app.add_option("--parallelism", g.parallelism, "Concurrent branch rollouts");
  app.add_option("--temperature", g.temperature, "Sampling temperature");
  app.add_option("--seed", g.seed, "Base seed");

  std::string task_id, question, tasks_path, out_path, in_path, ledger_path, run_dir, region = "both", csv_dir,
                                                                                   format = "text", mode = "single_answer",
                                                                                   judge_kind = "exact", judge_prompt, vote_method;
  std::size_t top = 0;

  auto* cmd_rollout = app.add_subcommand("rollout", "From-scratch rollouts for each task");
  cmd_rollout->add_option("--task-id", task_id, "Task id when giving --question");
  cmd_rollout->add_option("--question", question, "Question text");
  cmd_rollout->add_option("--tasks", tasks_path, "Task file (JSONL)");
  cmd_rollout->add_option("--out", out_path, "Trajectory JSONL output (default stdout)");

  auto* cmd_branch = app.add_subcommand("branch", "Select branch points and run partial rollouts");
  cmd_branch->add_option("--trajectories", in_path, "Initial trajectories (JSONL)")->required();
  cmd_branch->add_option("--question", question, "Question text for every task");
  cmd_branch->add_option("--tasks", tasks_path, "Task file used to look up questions");
  cmd_branch->add_option("--out", out_path, "All trajectories (JSONL, default stdout)");
  cmd_branch->add_option("--ledger", ledger_path, "Cost ledgers, one JSON line per task");

  auto* cmd_run = app.add_subcommand("run", "Full pipeline over a task set into a run directory");
  cmd_run->add_option("--tasks", tasks_path, "Task file (JSONL); defaults to the scenario's tasks");
  cmd_run->add_option("--run-dir", run_dir, "Run directory")->required();

  auto* cmd_compress = app.add_subcommand("compress", "Compress trajectories into reports");
  cmd_compress->add_option("--trajectories", in_path, "Trajectories (JSONL)")->required();
  cmd_compress->add_option("--question", question, "Question text for every task");
  cmd_compress->add_option("--tasks", tasks_path, "Task file used to look up questions");
  cmd_compress->add_option("--out", out_path, "Report JSONL output (default stdout)");

  auto* cmd_aggregate = app.add_subcommand("aggregate", "Aggregate reports into one answer");
  cmd_aggregate->add_option("--reports", in_path, "Reports (JSONL)")->required();
  cmd_aggregate->add_option("--question", question, "Question text")->required();

  auto* cmd_vote = app.add_subcommand("vote", "Baseline answer selection over trajectories");
  cmd_vote->add_option("method", vote_method, "majority | weighted | maxtool")
      ->required()
      ->check(CLI::IsMember({"majority", "weighted", "maxtool"}));
  cmd_vote->add_option("--trajectories", in_path, "Trajectories (JSONL)")->required();

  auto* cmd_analyze = app.add_subcommand("analyze", "Per-step perplexity as CSV");
  cmd_analyze->add_option("--trajectories", in_path, "Trajectories (JSONL)")->required();
  cmd_analyze->add_option("--region", region, "reasoning | exploration | both");
  cmd_analyze->add_option("--top", top, "Only the N highest-perplexity steps per trajectory and region");

  auto* cmd_metrics = app.add_subcommand("metrics", "Metric tables for a finished run");
  cmd_metrics->add_option("--run-dir", run_dir, "Run directory")->required();
  cmd_metrics->add_option("--format", format, "text | json")->check(CLI::IsMember({"text", "json"}));
  cmd_metrics->add_option("--csv", csv_dir, "Also write CSV tables into this directory");

  auto* cmd_evaluate = app.add_subcommand("evaluate", "Score a finished run against gold answers");
  cmd_evaluate->add_option("--run-dir", run_dir, "Run directory")->required();
  cmd_evaluate->add_option("--tasks", tasks_path, "Task file with gold answers; defaults to the scenario's tasks");
  cmd_evaluate->add_option("--mode", mode, "single_answer | no_scaling");
  cmd_evaluate->add_option("--judge", judge_kind, "exact | model")->check(CLI::IsMember({"exact", "model"}));
  cmd_evaluate->add_option("--judge-prompt", judge_prompt, "Judge prompt template with {question} {gold} {prediction}")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (cmd_metrics->parsed()) {
      auto m = emit_metrics(run_dir);
      if (!csv_dir.empty()) write_csv(m, csv_dir);
      if (format == "json")
        std::cout << json(m.metrics).dump(2) << "\n";
      else
        std::cout << render_text(m);
      return kOk;
    }

    if (cmd_analyze->parsed()) {
      std::vector<RegionTag> regions;
      if (region == "both")
        regions = {RegionTag::Reasoning, RegionTag::Exploration};
      else
        regions = {parse_region(region)};
      std::cout << "trajectory_id,step_index,region,ppl\n";
      for (const auto& t : read_trajectories(in_path))
        for (auto r : regions) {
          auto series = region_ppl_series(t, r);
          if (top > 0) {
            for (auto idx : top_uncertainty_steps(t, r, top)) {
              const auto& s = series.at(idx);
              std::cout << t.id << "," << s.step_index << "," << to_string(r) << "," << ppl_cell(s.ppl) << "\n";
            }
            continue;
          }
          for (const auto& s : series)
            std::cout << t.id << "," << s.step_index << "," << to_string(r) << "," << ppl_cell(s.ppl) << "\n";
        }
      return kOk;
    }

    if (cmd_vote->parsed()) {
      auto method = parse_selection_method(vote_method);
      for (auto& [tid, trajs] : by_task(read_trajectories(in_path))) {
        FinalAnswer fa;
        auto cands = candidates_from(trajs);
        switch (method) {
          case SelectionMethod::MajorityVote: fa = majority_vote(std::span<const Candidate>(cands)); break;
          case SelectionMethod::WeightedVote: fa = weighted_vote(std::span<const Candidate>(cands)); break;
          case SelectionMethod::MaxToolCall: fa = max_tool_call_select(trajs); break;
          default: fail(ErrorCode::ConfigError, "vote method must be majority, weighted or maxtool");
        }
        json j = fa;
        j["task_id"] = tid;
        std::cout << j.dump() << "\n";
      }
      return kOk;
    }

    Session session(g);
    const RunConfig& rc = session.config.run;

    if (cmd_run->parsed()) {
      auto record = run_pipeline(session.tasks(tasks_path), session.config, session.backends, run_dir, &std::cerr);
      std::cout << json(record.metrics).dump(2) << "\n";
      for (const auto& t : record.tasks)
        if (!t.complete) return kRunFailure;
      return kOk;
    }

    if (cmd_rollout->parsed()) {
      std::vector<Task> tasks;
      if (!question.empty())
        tasks.push_back({task_id.empty() ? "task" : task_id, question, std::nullopt, std::nullopt});
      else
        tasks = session.tasks(tasks_path);
      auto env = session.env();
      Output out(out_path);
      for (const auto& task : tasks)
        for (const auto& t : run_initial_rollouts(task.task_id, task.question, rc, env)) out.stream() << to_jsonl_line(t) << "\n";
      return kOk;
    }

    if (cmd_branch->parsed()) {
      auto lookup = questions(session, question, tasks_path);
      auto env = session.env();
      Output out(out_path);
      std::optional<Output> ledger;
      if (!ledger_path.empty()) ledger.emplace(ledger_path);
      for (auto& [tid, initial] : by_task(read_trajectories(in_path))) {
        std::vector<BranchPoint> points;
        if (rc.sampling_budget_N > initial.size()) points = select_branch_points(initial, rc.region_strategy, rc.branch_top_k);
        RunConfig task_rc = rc;
        task_rc.initial_rollouts_M = static_cast<std::uint32_t>(initial.size());
        auto exec = execute_parallel(plan_branches(points, task_rc), initial, lookup(tid), task_rc, env);
        for (const auto& t : exec.trajectories) out.stream() << to_jsonl_line(t) << "\n";
        if (ledger) {
          json l = exec.ledger;
          l["task_id"] = tid;
          ledger->stream() << l.dump() << "\n";
        }
      }
      return kOk;
    }

    if (cmd_compress->parsed()) {
      auto lookup = questions(session, question, tasks_path);
      Output out(out_path);
      for (const auto& t : read_trajectories(in_path))
        out.stream() << json(compress_trajectory(t, lookup(t.task_id), *session.backends.aggregation, session.prompts)).dump() << "\n";
      return kOk;
    }

    if (cmd_aggregate->parsed()) {
      std::vector<Report> reports;
      for (const auto& j : io::read_jsonl(in_path)) reports.push_back(j.get<Report>());
      auto fa = aggregate_reports(question, reports, *session.backends.aggregation, session.prompts,
                                  {session.config.aggregation_context_tokens, 3});
      std::cout << json(fa).dump(2) << "\n";
      return kOk;
    }

    if (cmd_evaluate->parsed()) {
      auto eval_mode = parse_eval_mode(mode);
      auto tasks = session.tasks(tasks_path);
      std::unique_ptr<Judge> judge;
      if (judge_kind == "model") {
        if (judge_prompt.empty()) fail(ErrorCode::ConfigError, "--judge model needs --judge-prompt");
        judge = std::make_unique<ModelJudge>(session.backends.aggregation, io::read_file(judge_prompt));
      } else {
        judge = std::make_unique<ExactMatchJudge>();
      }
      std::cout << json(evaluate_run(run_dir, tasks, *judge, eval_mode)).dump(2) << "\n";
      return kOk;
    }
  } catch (const Error& e) {
    std::cerr << "pmuse: " << e.what() << "\n";
    return e.code() == ErrorCode::ConfigError ? kConfigError : kRunFailure;
  } catch (const std::exception& e) {
    std::cerr << "pmuse: " << e.what() << "\n";
    return kRunFailure;
  }
  return kConfigError;
}
