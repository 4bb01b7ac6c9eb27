// Walks one task through both stages against the scripted simulator:
// initial rollout, uncertainty-guided branching, compression, aggregation.
//
//   quickstart [scenario_dir] [scenario_id]

#include <iostream>

#include "pmuse/harness.hpp"
#include "pmuse/scripted.hpp"

using namespace pmuse;

int main(int argc, char** argv) {
  std::string dir = argc > 1 ? argv[1] : PMUSE_SCENARIO_DIR;
  std::string id = argc > 2 ? argv[2] : "scenario-branchy";
  try {
    auto scenario = ScriptedScenario::load(dir, id);
    auto model = std::make_shared<ScriptedModel>(scenario);
    AgentEnvironment env;
    env.model = model;
    env.tools = make_standard_tools(std::make_shared<ScriptedSearch>(scenario), std::make_shared<ScriptedVisit>(scenario));

    const auto& task = scenario->tasks().at(0);
    std::string task_id = task.at("task_id"), question = task.at("question");
    RunConfig cfg;  // N=8, M=1, top-2, 3 branches per step
    std::cout << "question: " << question << "\n";

    auto initial = run_initial_rollouts(task_id, question, cfg, env);
    for (const auto& t : initial) {
      std::cout << t.id << ": " << t.steps.size() << " steps, answer " << t.final_answer.value_or("(none)") << "\n";
      for (const auto& s : region_ppl_series(t, RegionTag::Exploration))
        if (s.ppl) std::cout << "  step " << s.step_index << " exploration ppl " << text::format_real(*s.ppl) << "\n";
    }

    auto points = select_branch_points(initial, cfg.region_strategy, cfg.branch_top_k);
    auto plan = plan_branches(points, cfg);
    for (const auto& p : plan.branch_points)
      std::cout << "branch at " << p.trajectory_id << " step " << p.step_index << " x" << p.allocated_branches << "\n";

    auto exec = execute_parallel(plan, initial, question, cfg, env);
    std::cout << exec.trajectories.size() << " trajectories, " << exec.ledger.prefix_total() << " prefix tokens reused, reuse factor "
              << text::format_real(reuse_factor(exec.ledger)) << "\n";

    std::vector<Report> reports;
    for (const auto& t : exec.trajectories) reports.push_back(compress_trajectory(t, question, *model));
    auto cands = candidates_from(exec.trajectories);
    auto vote = majority_vote(std::span<const Candidate>(cands));
    auto final_answer = aggregate_reports(question, reports, *model);
    std::cout << "majority vote: " << vote.answer << "\n";
    std::cout << "aggregated:    " << final_answer.answer << "  (" << final_answer.justification << ")\n";
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
}
