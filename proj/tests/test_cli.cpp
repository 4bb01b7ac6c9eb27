#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>

#include "support.hpp"

using namespace pmuse;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded; arguments are passed through a shell.
Result run(const std::string& args) {
  std::string cmd = std::string(PMUSE_CLI) + " --scenario-dir " + testkit::scenario_dir().string() + " " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    auto nl = s.find('\n', pos);
    if (nl == std::string::npos) nl = s.size();
    out.push_back(s.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return out;
}

}  // namespace

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("no-such-command").code, 2);
  EXPECT_EQ(run("--scenario missing-scenario rollout").code, 2);
  EXPECT_EQ(run("rollout --question q").code, 2);  // no backend configured
  auto dir = testkit::temp_dir("cli-missing");
  EXPECT_EQ(run("metrics --run-dir " + dir.string()).code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, RolloutBranchVote) {
  auto dir = testkit::temp_dir("cli-branch");
  auto init = (dir / "init.jsonl").string();
  auto all = (dir / "all.jsonl").string();
  auto ledger = (dir / "ledger.jsonl").string();
  ASSERT_EQ(run("--scenario scenario-branchy rollout --out " + init).code, 0);
  ASSERT_EQ(io::read_jsonl(init).size(), 1u);

  ASSERT_EQ(run("--scenario scenario-branchy branch --trajectories " + init + " --out " + all + " --ledger " + ledger).code, 0);
  auto trajs = io::read_jsonl(all);
  ASSERT_EQ(trajs.size(), 8u);
  auto l = io::read_jsonl(ledger);
  ASSERT_EQ(l.size(), 1u);
  EXPECT_EQ(l[0]["task_id"], "branchy");
  EXPECT_EQ(l[0]["records"].size(), 8u);

  auto vote = run("vote majority --trajectories " + all);
  ASSERT_EQ(vote.code, 0);
  auto fa = json::parse(vote.out);
  EXPECT_EQ(fa["method"], "majority_vote");
  EXPECT_EQ(fa["answer"], "Danube");
  EXPECT_EQ(run("vote maxtool --trajectories " + all).code, 0);
  EXPECT_EQ(run("vote coin --trajectories " + all).code, 2);
}

TEST(Cli, FlagsOverrideConfigFile) {
  auto dir = testkit::temp_dir("cli-config");
  json cfg{{"sampling_budget", 6},
           {"backends", {{"default", {{"type", "scripted"}, {"scenario_dir", testkit::scenario_dir().string()}, {"scenario_id", "scenario-branchy"}}}}}};
  io::write_file(dir / "config.json", cfg.dump());
  auto init = (dir / "init.jsonl").string();
  auto conf = " --config " + (dir / "config.json").string() + " ";
  ASSERT_EQ(run(conf + "rollout --out " + init).code, 0);

  auto from_file = run(conf + "branch --trajectories " + init);
  ASSERT_EQ(from_file.code, 0);
  EXPECT_EQ(lines(from_file.out).size(), 6u);
  auto from_flag = run(conf + "--sampling-budget 3 branch --trajectories " + init);
  ASSERT_EQ(from_flag.code, 0);
  EXPECT_EQ(lines(from_flag.out).size(), 3u);

  EXPECT_EQ(run(conf + "--strategy sideways branch --trajectories " + init).code, 2);
}

TEST(Cli, CompressAggregate) {
  auto dir = testkit::temp_dir("cli-agg");
  auto init = (dir / "init.jsonl").string();
  auto all = (dir / "all.jsonl").string();
  auto reports = (dir / "reports.jsonl").string();
  ASSERT_EQ(run("--scenario scenario-branchy rollout --out " + init).code, 0);
  ASSERT_EQ(run("--scenario scenario-branchy branch --trajectories " + init + " --out " + all).code, 0);
  ASSERT_EQ(run("--scenario scenario-branchy compress --trajectories " + all + " --out " + reports).code, 0);
  ASSERT_EQ(io::read_jsonl(reports).size(), 8u);
  auto q = testkit::question_of(*testkit::scenario("scenario-branchy"), "branchy");
  auto agg = run("--scenario scenario-branchy aggregate --reports " + reports + " --question '" + q + "'");
  ASSERT_EQ(agg.code, 0);
  auto fa = json::parse(agg.out);
  EXPECT_EQ(fa["method"], "aggregation");
  EXPECT_EQ(fa["inputs_used"].size(), 8u);
}

TEST(Cli, Analyze) {
  auto dir = testkit::temp_dir("cli-analyze");
  auto init = (dir / "init.jsonl").string();
  ASSERT_EQ(run("--scenario scenario-branchy rollout --out " + init).code, 0);
  auto t = io::read_jsonl(init)[0].get<Trajectory>();

  auto r = run("analyze --region reasoning --trajectories " + init);
  ASSERT_EQ(r.code, 0);
  auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), t.steps.size() + 1);
  EXPECT_EQ(rows[0], "trajectory_id,step_index,region,ppl");
  auto s0 = step_ppl(t.steps[0], RegionTag::Reasoning);
  EXPECT_EQ(rows[1], t.id + ",0,reasoning," + text::format_real(*s0.ppl));

  auto top = run("analyze --region exploration --top 1 --trajectories " + init);
  ASSERT_EQ(top.code, 0);
  auto top_rows = lines(top.out);
  ASSERT_EQ(top_rows.size(), 2u);
  auto best = top_uncertainty_steps(t, RegionTag::Exploration, 1);
  EXPECT_EQ(top_rows[1].rfind(t.id + "," + std::to_string(best[0]) + ",exploration,", 0), 0u);
}

TEST(Cli, RunMetricsEvaluate) {
  auto dir = testkit::temp_dir("cli-run");
  auto run_dir = (dir / "run").string();
  auto r = run("--scenario scenario-suite --parallelism 4 run --run-dir " + run_dir);
  ASSERT_EQ(r.code, 0);
  EXPECT_NEAR(json::parse(r.out)["pass_rate"].get<double>(), 0.75, 1e-12);

  auto m = run("metrics --format json --csv " + (dir / "csv").string() + " --run-dir " + run_dir);
  ASSERT_EQ(m.code, 0);
  EXPECT_NEAR(json::parse(m.out)["pass_rate"].get<double>(), 0.75, 1e-12);
  EXPECT_FALSE(std::filesystem::is_empty(dir / "csv"));
  EXPECT_NE(run("metrics --run-dir " + run_dir).out.find("pass_rate"), std::string::npos);

  auto single = run("--scenario scenario-suite evaluate --run-dir " + run_dir);
  ASSERT_EQ(single.code, 0);
  EXPECT_NEAR(json::parse(single.out)["pass_rate"].get<double>(), 0.75, 1e-12);
  auto noscale = run("--scenario scenario-suite evaluate --mode no_scaling --run-dir " + run_dir);
  ASSERT_EQ(noscale.code, 0);
  EXPECT_NEAR(json::parse(noscale.out)["pass_rate"].get<double>(), 0.4375, 1e-12);
  EXPECT_EQ(run("--scenario scenario-suite evaluate --judge model --run-dir " + run_dir).code, 2);
  io::write_file(dir / "judge.txt", "Question: {question}\nGold: {gold}\nPrediction: {prediction}\nCorrect?");
  auto judged = run("--scenario scenario-suite evaluate --judge model --judge-prompt " + (dir / "judge.txt").string() +
                    " --run-dir " + run_dir);
  ASSERT_EQ(judged.code, 0);
  EXPECT_NEAR(json::parse(judged.out)["pass_rate"].get<double>(), 0.75, 1e-12);
  EXPECT_EQ(run("--scenario scenario-suite evaluate --mode best_of --run-dir " + run_dir).code, 2);

  // Same config again is a no-op resume; a different result-relevant config is refused.
  EXPECT_EQ(run("--scenario scenario-suite run --run-dir " + run_dir).code, 0);
  EXPECT_EQ(run("--scenario scenario-suite --seed 9 run --run-dir " + run_dir).code, 2);
}
