#include <gtest/gtest.h>

#include "support.hpp"

using namespace pmuse;
using testkit::make_step;

namespace {

std::vector<RawToken> stream(std::initializer_list<std::pair<const char*, std::optional<double>>> items) {
  std::vector<RawToken> out;
  for (const auto& [t, lp] : items) out.push_back({t, lp});
  return out;
}

Trajectory three_step() {
  Trajectory t;
  t.id = "t/r0";
  t.task_id = "t";
  t.steps = {make_step(0, {-0.1, -0.2}, std::vector<double>{-0.3}), make_step(1, {-0.5}, std::vector<double>{-0.4, -0.1}),
             make_step(2, {-0.2, -0.2}, std::nullopt, true)};
  t.final_answer = "x";
  testkit::finalize(t);
  return t;
}

bool has(const std::vector<Diagnostic>& d, DiagnosticKind k, std::optional<std::uint32_t> step) {
  for (const auto& x : d)
    if (x.kind == k && x.step == step) return true;
  return false;
}

}  // namespace

TEST(SegmentStep, PartitionsThinkAndCallTokens) {
  auto s = stream({{"<think>", 0.0},
                   {"a", -0.1},
                   {" b", -0.2},
                   {"</think>", 0.0},
                   {"<tool_call>", 0.0},
                   {"{\"name\":", -0.1},
                   {"\"search\",", -0.2},
                   {"\"arguments\":", -0.3},
                   {"{\"query\":[\"x\"]}", -0.4},
                   {"}", -0.5},
                   {"</tool_call>", 0.0}});
  auto turn = segment_step(s, 0);
  EXPECT_EQ(turn.step.reasoning_tokens.size(), 2u);
  ASSERT_TRUE(turn.step.tool_call);
  EXPECT_EQ(turn.step.tool_call->raw_tokens.size(), 5u);
  EXPECT_FALSE(turn.step.is_terminal);
  EXPECT_EQ(turn.step.tool_call->tool_name, "search");
  EXPECT_EQ(turn.step.tool_call->arguments, (json{{"query", {"x"}}}));
  for (const auto& t : turn.step.reasoning_tokens) EXPECT_EQ(t.region, RegionTag::Reasoning);
  for (const auto& t : turn.step.tool_call->raw_tokens) EXPECT_EQ(t.region, RegionTag::Exploration);
}

TEST(SegmentStep, AnswerOnlyStreamIsTerminal) {
  auto s = stream({{"<think>", 0.0}, {"done", -0.1}, {"</think>", 0.0}, {"<answer>", 0.0}, {"42", -0.01}, {"</answer>", 0.0}});
  auto turn = segment_step(s, 3);
  EXPECT_TRUE(turn.step.is_terminal);
  EXPECT_FALSE(turn.step.tool_call);
  EXPECT_EQ(turn.step.index, 3u);
  EXPECT_EQ(turn.answer, "42");
  EXPECT_EQ(turn.step.reasoning_tokens.size(), 2u);  // answer tokens are Reasoning
}

TEST(SegmentStep, ScenarioBasicStepZeroMatchesFixtureAnnotations) {
  auto doc = testkit::scenario_json("scenario-basic");
  const auto& node = doc["nodes"]["b0"];
  auto think_lps = node["think"]["logprobs"].get<std::vector<double>>();
  auto call_lps = node["call"]["logprobs"].get<std::vector<double>>();

  testkit::Rig rig("scenario-basic");
  auto env = rig.env();
  ModelRequest req;
  req.messages = detail::history_messages(env, testkit::question_of(*rig.scen, "basic"), {});
  req.seed = 7;
  auto turn = segment_step(rig.model->chat_generate(req).assistant_tokens, 0);

  ASSERT_EQ(turn.step.reasoning_tokens.size(), 7u);
  ASSERT_TRUE(turn.step.tool_call);
  ASSERT_EQ(turn.step.tool_call->raw_tokens.size(), 9u);
  auto words = text::split_whitespace(node["think"]["text"].get<std::string>());
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(text::trim(turn.step.reasoning_tokens[i].text), words[i]);
    EXPECT_EQ(turn.step.reasoning_tokens[i].logprob, think_lps[i]);
    EXPECT_EQ(turn.step.reasoning_tokens[i].region, RegionTag::Reasoning);
  }
  std::string payload;
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(turn.step.tool_call->raw_tokens[i].logprob, call_lps[i]);
    EXPECT_EQ(turn.step.tool_call->raw_tokens[i].region, RegionTag::Exploration);
    payload += turn.step.tool_call->raw_tokens[i].text;
  }
  EXPECT_EQ(json::parse(payload), (json{{"name", "search"}, {"arguments", node["call"]["arguments"]}}));
}

TEST(SegmentStep, Errors) {
  auto unbalanced = stream({{"<think>", 0.0}, {"a", -0.1}});
  EXPECT_THROW(
      {
        try {
          segment_step(unbalanced, 0);
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), ErrorCode::MalformedMarkers);
          throw;
        }
      },
      Error);

  auto bad_json = stream({{"<tool_call>", 0.0}, {"{not json", -0.1}, {"</tool_call>", 0.0}});
  try {
    segment_step(bad_json, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedMarkers);
  }

  auto missing = stream({{"<think>", 0.0}, {"a", std::nullopt}, {"</think>", 0.0}});
  try {
    segment_step(missing, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingLogprobs);
  }

  auto nested = stream({{"<think>", 0.0}, {"<think>", 0.0}, {"</think>", 0.0}});
  EXPECT_THROW(segment_step(nested, 0), Error);
}

TEST(SegmentStep, EmptyThinkIsLegal) {
  auto s = stream({{"<think>", 0.0}, {"</think>", 0.0}, {"<tool_call>", 0.0}, {"{\"name\":\"visit\"}", -0.2}, {"</tool_call>", 0.0}});
  auto turn = segment_step(s, 0);
  EXPECT_TRUE(turn.step.reasoning_tokens.empty());
  ASSERT_TRUE(turn.step.tool_call);
  EXPECT_EQ(turn.step.tool_call->arguments, json::object());
}

TEST(SegmentStep, Deterministic) {
  auto s = stream({{"<think>", 0.0}, {"a", -0.1}, {"</think>", 0.0}, {"<tool_call>", 0.0}, {"{\"name\":\"search\"}", -0.2},
                   {"</tool_call>", 0.0}});
  EXPECT_EQ(segment_step(s, 1).step, segment_step(s, 1).step);
}

TEST(SegmentStructured, TokensInsideArgumentsAreExploration) {
  std::string args = R"({"query":["x"]})";
  auto s = stream({{"Let me", -0.1}, {" search.", -0.2}, {"search", -0.3}, {R"({"query":)", -0.4}, {R"(["x"]})", -0.5}});
  auto turn = segment_structured(s, {"search", args}, 0);
  EXPECT_EQ(turn.step.reasoning_tokens.size(), 2u);
  ASSERT_TRUE(turn.step.tool_call);
  EXPECT_EQ(turn.step.tool_call->raw_tokens.size(), 3u);
  EXPECT_EQ(turn.step.tool_call->arguments, json::parse(args));
  EXPECT_FALSE(turn.step.is_terminal);
  // Partition: nothing lost, nothing duplicated.
  EXPECT_EQ(turn.step.generated_tokens(), s.size());
}

TEST(ValidateTrajectory, WellFormedHasNoDiagnostics) { EXPECT_TRUE(validate_trajectory(three_step()).empty()); }

TEST(ValidateTrajectory, ResponseWithoutCall) {
  auto t = three_step();
  t.steps[1].tool_call.reset();
  t.steps[1].is_terminal = false;
  testkit::finalize(t);
  auto d = validate_trajectory(t);
  EXPECT_TRUE(has(d, DiagnosticKind::ResponseWithoutCall, 1u));
}

TEST(ValidateTrajectory, CountOffByOne) {
  auto t = three_step();
  std::uint64_t sum = 0;
  for (const auto& s : t.steps) sum += s.reasoning_tokens.size() + (s.tool_call ? s.tool_call->raw_tokens.size() : 0);
  t.generated_token_count = sum + 1;
  auto d = validate_trajectory(t);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].kind, DiagnosticKind::CountMismatch);
}

TEST(ValidateTrajectory, OtherInvariants) {
  auto t = three_step();
  t.steps[0].is_terminal = true;  // terminal with a call, and not last
  auto d = validate_trajectory(t);
  EXPECT_TRUE(has(d, DiagnosticKind::TerminalWithToolCall, 0u));
  EXPECT_TRUE(has(d, DiagnosticKind::NonFinalTerminal, 0u));

  auto u = three_step();
  u.steps[2].reasoning_tokens[0].region = RegionTag::Exploration;
  u.steps[1].reasoning_tokens[0].logprob = 0.5;
  u.steps[0].index = 4;
  auto e = validate_trajectory(u);
  EXPECT_TRUE(has(e, DiagnosticKind::WrongRegionTag, 2u));
  EXPECT_TRUE(has(e, DiagnosticKind::InvalidLogprob, 1u));
  EXPECT_TRUE(has(e, DiagnosticKind::StepIndexMismatch, 0u));

  auto parent = three_step();
  auto b = three_step();
  b.id = "t/r0/b5.0";
  b.origin = Branch{"t/r0", 5};
  EXPECT_TRUE(has(validate_trajectory(b, &parent), DiagnosticKind::InvalidBranchIndex, 5u));
  b.origin = Branch{"t/r0", 2};
  EXPECT_TRUE(validate_trajectory(b, &parent).empty());
}

TEST(TrajectoryJson, RoundTripIsIdentity) {
  auto t = three_step();
  t.origin = Branch{"t/r9", 1};
  t.prompt_token_count = 77;
  t.sampling_seed = -3;
  t.status = TrajectoryStatus::BudgetExhausted;
  t.error = "cap";
  t.steps[0].tool_response->error_flag = true;
  t.steps[0].reasoning_tokens[0].logprob = -0.1234567890123456789;
  auto line = to_jsonl_line(t);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  EXPECT_EQ(trajectory_from_line(line), t);
  auto j = json::parse(line);
  EXPECT_EQ(j["schema"], 1);
  EXPECT_EQ(j["steps"][0]["tool_call"]["raw_tokens"][0]["region"], "exploration");
  EXPECT_EQ(j["steps"][0]["reasoning_tokens"][0]["region"], "reasoning");
}

TEST(TrajectoryJson, RandomizedRoundTrip) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lp(-8.0, 0.0);
  for (int trial = 0; trial < 200; ++trial) {
    Trajectory t;
    t.id = "r" + std::to_string(trial);
    t.task_id = "task";
    std::size_t steps = 1 + rng() % 6;
    for (std::size_t i = 0; i < steps; ++i) {
      std::vector<double> r(rng() % 5), c(rng() % 5 + 1);
      for (auto& x : r) x = lp(rng);
      for (auto& x : c) x = lp(rng);
      bool last = i + 1 == steps;
      t.steps.push_back(make_step(static_cast<std::uint32_t>(i), r, last ? std::nullopt : std::optional(c), last));
    }
    t.final_answer = "answer " + std::to_string(trial);
    testkit::finalize(t);
    ASSERT_EQ(trajectory_from_line(to_jsonl_line(t)), t);
  }
}

TEST(RunConfig, DefaultsAndValidation) {
  RunConfig c;
  EXPECT_EQ(c.sampling_budget_N, 8u);
  EXPECT_EQ(c.initial_rollouts_M, 1u);
  EXPECT_EQ(c.branch_top_k, 2u);
  EXPECT_EQ(c.branches_per_step, 3u);
  EXPECT_NO_THROW(c.validate());
  c.initial_rollouts_M = 9;
  EXPECT_THROW(c.validate(), Error);
  c = RunConfig{};
  c.parallelism_P = 0;
  EXPECT_THROW(c.validate(), Error);

  RunConfig d;
  d.region_strategy = RegionStrategy::Mixed;
  d.aggregation_backend = "strong";
  EXPECT_EQ(json(d).get<RunConfig>().aggregation_backend, "strong");
  EXPECT_EQ(json(d).get<RunConfig>().region_strategy, RegionStrategy::Mixed);
  EXPECT_THROW(json({{"region_strategy", "sideways"}}).get<RunConfig>(), Error);
}
