#include <gtest/gtest.h>

#include "support.hpp"

using namespace pmuse;

namespace {

Trajectory basic_rollout(testkit::Rig& rig, const std::string& id) {
  auto env = rig.env();
  return rollout("basic", testkit::question_of(*rig.scen, "basic"), id, RunConfig{}, env, 0);
}

std::vector<Report> antimajority_reports() {
  std::vector<Report> out;
  auto doc = testkit::scenario_json("scenario-antimajority");
  for (const auto& r : doc["fixture_reports"]) out.push_back(r.get<Report>());
  return out;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::InvalidArgument;
}

Trajectory answered(const std::string& id, const std::string& answer, std::size_t calls, double lp) {
  Trajectory t;
  t.id = id;
  t.task_id = "t";
  for (std::size_t i = 0; i < calls; ++i) t.steps.push_back(testkit::make_step(static_cast<std::uint32_t>(i), {lp}, std::vector<double>{lp}));
  t.steps.push_back(testkit::make_step(static_cast<std::uint32_t>(calls), {lp}, std::nullopt, true));
  t.final_answer = answer;
  testkit::finalize(t);
  return t;
}

}  // namespace

TEST(Compress, FixtureReport) {
  testkit::Rig rig("scenario-basic");
  auto t = basic_rollout(rig, "basic/r0");
  auto r = compress_trajectory(t, testkit::question_of(*rig.scen, "basic"), *rig.model);
  auto fixture = testkit::scenario_json("scenario-basic")["compress"]["basic/r0"][0];
  EXPECT_FALSE(r.degraded);
  EXPECT_EQ(r.trajectory_id, "basic/r0");
  EXPECT_EQ(report_body(r), fixture);
  EXPECT_EQ(r.candidate_answer, "42");
  EXPECT_EQ(r.compressed_token_count, approximate_token_count(fixture.dump()));
  EXPECT_LT(r.compressed_token_count, t.generated_token_count + t.prompt_token_count);

  auto reqs = rig.model->captured(Purpose::Compress);
  ASSERT_EQ(reqs.size(), 1u);
  EXPECT_EQ(reqs[0].subject, "basic/r0");
  EXPECT_EQ(reqs[0].temperature, 0.0);
}

TEST(Compress, RetriesAfterTwoMalformedOutputs) {
  testkit::Rig rig("scenario-basic");
  auto t = basic_rollout(rig, "basic/retry");
  auto r = compress_trajectory(t, testkit::question_of(*rig.scen, "basic"), *rig.model);
  EXPECT_FALSE(r.degraded);
  EXPECT_EQ(r.candidate_answer, "42");
  EXPECT_EQ(rig.model->captured(Purpose::Compress).size(), 3u);
  // The third request carries both failed outputs and two repair prompts.
  auto last = rig.model->captured(Purpose::Compress).back();
  EXPECT_EQ(last.messages.size(), 5u);
}

TEST(Compress, PersistentFailureDegrades) {
  testkit::Rig rig("scenario-basic");
  auto t = basic_rollout(rig, "basic/never");
  auto r = compress_trajectory(t, testkit::question_of(*rig.scen, "basic"), *rig.model);
  EXPECT_TRUE(r.degraded);
  EXPECT_TRUE(r.solution_methods.empty());
  EXPECT_EQ(r.candidate_answer, "42");
  EXPECT_EQ(r.final_reasoning, reasoning_text(t.steps.back()));
  EXPECT_EQ(rig.model->captured(Purpose::Compress).size(), 4u);  // 1 + 3 repairs
}

TEST(Compress, UnansweredTrajectoryDegradesWithoutCall) {
  testkit::Rig rig("scenario-basic");
  auto env = rig.env();
  RunConfig cfg;
  cfg.max_steps = 2;
  auto t = rollout("loop", testkit::question_of(*rig.scen, "loop"), "loop/r0", cfg, env, 0);
  auto r = compress_trajectory(t, "q", *rig.model);
  EXPECT_TRUE(r.degraded);
  EXPECT_EQ(r.candidate_answer, "");
  EXPECT_TRUE(rig.model->captured(Purpose::Compress).empty());
}

TEST(Compress, DefaultRuleKeepsAnswerAndStructure) {
  testkit::Rig rig("scenario-branchy");
  auto env = rig.env();
  auto q = testkit::question_of(*rig.scen, "branchy");
  auto t = rollout("branchy", q, "branchy/r0", RunConfig{}, env, 0);
  auto r = compress_trajectory(t, q, *rig.model);
  EXPECT_FALSE(r.degraded);
  EXPECT_EQ(r.candidate_answer, *t.final_answer);
  EXPECT_EQ(r.solution_methods.size(), t.tool_call_count());
  EXPECT_EQ(r.solution_methods[0].tool, "search");
}

TEST(Compress, LeakDetection) {
  Trajectory t = answered("x", "a", 1, -0.1);
  std::string page;
  for (int i = 0; i < 400; ++i) page += "w" + std::to_string(i) + " ";
  t.steps[0].tool_response->content = page;
  Report copy;
  copy.final_reasoning = page;
  copy.candidate_answer = "a";
  EXPECT_TRUE(report_leaks_tool_output(copy, t, 256));
  Report short_quote;
  short_quote.final_reasoning = page.substr(0, page.find("w200 "));
  EXPECT_FALSE(report_leaks_tool_output(short_quote, t, 256));
}

TEST(ReportJson, RoundTrip) {
  for (const auto& r : antimajority_reports()) {
    json j = r;
    EXPECT_EQ(j["schema"], kSchemaVersion);
    EXPECT_EQ(j.get<Report>(), r);
  }
  EXPECT_EQ(code_of([] { detail::parse_report_body(json{{"solution_planning", "x"}}); }), ErrorCode::SchemaError);
}

TEST(EntityGraph, FixtureExtraction) {
  testkit::Rig rig("scenario-basic");
  auto t = basic_rollout(rig, "basic/r0");
  auto g = extract_entity_graph(t, testkit::question_of(*rig.scen, "basic"), std::string("42"), *rig.model);
  EXPECT_EQ(g.vertices.size(), 5u);
  EXPECT_EQ(g.relations.size(), 3u);
  EXPECT_EQ(g.effective_count(), 3u);
  EXPECT_NEAR(redundancy_ratio(g), 0.4, 1e-12);
  EXPECT_EQ(g.vertices[0], text::canonical_answer("capital of France"));
}

TEST(EntityGraph, DanglingRelationIsRepaired) {
  testkit::Rig rig("scenario-basic");
  auto t = basic_rollout(rig, "basic/bad-edge");
  auto g = extract_entity_graph(t, "q", std::nullopt, *rig.model);
  EXPECT_EQ(g.relations.size(), 1u);
  EXPECT_EQ(g.relations[0].target, "42");
  EXPECT_EQ(rig.model->captured(Purpose::ExtractEntities).size(), 2u);
}

TEST(EntityGraph, DefaultRuleMarksAnswerBearingCalls) {
  testkit::Rig rig("scenario-branchy");
  auto env = rig.env();
  auto q = testkit::question_of(*rig.scen, "branchy");
  auto t = rollout("branchy", q, "branchy/r0", RunConfig{}, env, 0);
  auto g = extract_entity_graph(t, q, std::string("Danube"), *rig.model);
  EXPECT_NO_THROW(g.validate());
  EXPECT_GE(g.vertices.size(), 3u);
  EXPECT_TRUE(std::find(g.vertices.begin(), g.vertices.end(), "danube") != g.vertices.end());
  double rr = redundancy_ratio(g);
  EXPECT_GE(rr, 0.0);
  EXPECT_LT(rr, 1.0);
}

TEST(EntityGraph, EmptyTrajectoryGivesEmptyGraph) {
  testkit::Rig rig("scenario-basic");
  Trajectory t;
  t.id = "none";
  auto g = extract_entity_graph(t, "q", std::nullopt, *rig.model);
  EXPECT_TRUE(g.vertices.empty());
  EXPECT_EQ(code_of([&] { redundancy_ratio(g); }), ErrorCode::EmptyGraph);
}

TEST(Redundancy, Examples) {
  EntityGraph g;
  for (int i = 0; i < 4; ++i) g.add_vertex("v" + std::to_string(i), i == 0);
  EXPECT_DOUBLE_EQ(redundancy_ratio(g), 0.75);
  EntityGraph all;
  all.add_vertex("a", true);
  all.add_vertex("b", true);
  EXPECT_DOUBLE_EQ(redundancy_ratio(all), 0.0);
  EntityGraph none;
  none.add_vertex("a", false);
  EXPECT_DOUBLE_EQ(redundancy_ratio(none), 1.0);
}

TEST(Redundancy, GraphValidation) {
  json bad{{"vertices", {"a", "b"}}, {"effective_flags", {true}}};
  EXPECT_EQ(code_of([&] { bad.get<EntityGraph>(); }), ErrorCode::SchemaError);
  json dup{{"vertices", {"A", "a"}}, {"effective_flags", {true, false}}};
  EXPECT_EQ(code_of([&] { dup.get<EntityGraph>(); }), ErrorCode::SchemaError);
  json edge{{"vertices", {"a"}}, {"effective_flags", {true}}, {"relations", {{{"source", "a"}, {"target", "z"}}}}};
  EXPECT_EQ(code_of([&] { edge.get<EntityGraph>(); }), ErrorCode::SchemaError);
}

TEST(Aggregate, FollowsEvidenceOverMajority) {
  auto scen = testkit::scenario("scenario-antimajority");
  ScriptedModel model(scen);
  auto doc = testkit::scenario_json("scenario-antimajority");
  auto reports = antimajority_reports();
  auto fa = aggregate_reports(doc["question"], reports, model);
  EXPECT_EQ(fa.answer, doc["designated_answer"]);
  EXPECT_EQ(fa.method, SelectionMethod::Aggregation);
  EXPECT_EQ(fa.inputs_used.size(), 3u);

  std::vector<std::string> answers;
  for (const auto& r : reports) answers.push_back(r.candidate_answer);
  EXPECT_NE(majority_vote(std::span<const std::string>(answers)).answer, fa.answer);

  auto reqs = model.captured(Purpose::Aggregate);
  ASSERT_EQ(reqs.size(), 1u);
  EXPECT_EQ(reqs[0].tool_schemas, json::array());
  EXPECT_NE(reqs[0].messages[0].content.find("Marseille"), std::string::npos);
}

TEST(Aggregate, SingleReportShortCircuits) {
  auto scen = testkit::scenario("scenario-antimajority");
  ScriptedModel model(scen);
  auto reports = antimajority_reports();
  reports.resize(1);
  auto fa = aggregate_reports("q", reports, model);
  EXPECT_EQ(fa.answer, "Lyon");
  EXPECT_EQ(model.calls(), 0u);
  EXPECT_EQ(code_of([&] { aggregate_reports("q", {}, model); }), ErrorCode::InvalidArgument);
}

TEST(Aggregate, AllDegradedWarns) {
  auto scen = testkit::scenario("scenario-antimajority");
  ScriptedModel model(scen);
  auto reports = antimajority_reports();
  for (auto& r : reports) r.degraded = true;
  auto fa = aggregate_reports("q", reports, model);
  ASSERT_EQ(fa.warnings.size(), 1u);
}

TEST(Aggregate, TrimsThenOverflows) {
  auto scen = testkit::scenario("scenario-antimajority");
  auto reports = antimajority_reports();
  std::string long_answer;
  for (int i = 0; i < 300; ++i) long_answer += "detail" + std::to_string(i) + " ";
  for (auto& r : reports)
    for (auto& m : r.solution_methods) {
      m.subanswer = long_answer;
      m.parameters["padding"] = long_answer;
    }

  ScriptedModel full(scen);
  std::uint64_t untrimmed = 0;
  {
    AggregationOptions big;
    big.context_budget_tokens = 1u << 30;
    aggregate_reports("q", reports, full, {}, big);
    untrimmed = full.count_tokens(full.captured(Purpose::Aggregate)[0].messages[0].content);
  }

  ScriptedModel model(scen);
  AggregationOptions opt;
  opt.context_budget_tokens = untrimmed / 2;
  auto fa = aggregate_reports("q", reports, model, {}, opt);
  EXPECT_EQ(fa.answer, "Marseille");
  auto prompt = model.captured(Purpose::Aggregate)[0].messages[0].content;
  EXPECT_LE(model.count_tokens(prompt), opt.context_budget_tokens);
  EXPECT_EQ(prompt.find("padding"), std::string::npos);
  EXPECT_NE(prompt.find("Marseille"), std::string::npos);

  ScriptedModel tight(scen);
  opt.context_budget_tokens = 50;
  EXPECT_EQ(code_of([&] { aggregate_reports("q", reports, tight, {}, opt); }), ErrorCode::ContextOverflow);
  EXPECT_EQ(tight.calls(), 0u);
}

TEST(Aggregate, RejectsEnumeratedAlternatives) {
  std::vector<Report> reports(2);
  reports[0].trajectory_id = "a";
  reports[0].candidate_answer = "Lyon";
  reports[1].trajectory_id = "b";
  reports[1].candidate_answer = "Marseille";
  EXPECT_TRUE(detail::enumerates_alternatives("Lyon or Marseille", reports));
  EXPECT_FALSE(detail::enumerates_alternatives("Marseille", reports));
  EXPECT_FALSE(detail::enumerates_alternatives("Paris", reports));
}

TEST(MajorityVote, Examples) {
  std::vector<std::string> a{"Paris", "paris", "Lyon"};
  auto fa = majority_vote(std::span<const std::string>(a));
  EXPECT_EQ(fa.answer, "Paris");
  EXPECT_EQ(fa.method, SelectionMethod::MajorityVote);
  EXPECT_EQ(fa.inputs_used, (std::vector<std::string>{"0", "1"}));

  std::vector<std::string> tie{"B", "A", "A", "B"};
  EXPECT_EQ(majority_vote(std::span<const std::string>(tie)).answer, "B");

  auto c = make_candidates(tie, std::vector<double>{0.1, 0.4, 0.4, 0.1});
  EXPECT_EQ(majority_vote(std::span<const Candidate>(c)).answer, "A");

  std::vector<std::string> none;
  EXPECT_EQ(code_of([&] { majority_vote(std::span<const std::string>(none)); }), ErrorCode::NoAnswers);
}

TEST(WeightedVote, Examples) {
  std::vector<std::string> a{"X", "Y", "Y"};
  std::vector<double> c{0.9, 0.4, 0.4};
  EXPECT_EQ(weighted_vote(a, c).answer, "X");
  std::vector<double> d{0.5, 0.3, 0.3};
  EXPECT_EQ(weighted_vote(a, d).answer, "Y");
  std::vector<double> tie{0.5, 0.25, 0.25};
  EXPECT_EQ(weighted_vote(a, tie).answer, "X");

  std::vector<double> short_c{0.5};
  EXPECT_EQ(code_of([&] { weighted_vote(a, short_c); }), ErrorCode::LengthMismatch);
  std::vector<double> zero{0.0, 0.5, 0.5};
  EXPECT_EQ(code_of([&] { weighted_vote(a, zero); }), ErrorCode::InvalidArgument);
  std::vector<double> big{1.5, 0.5, 0.5};
  EXPECT_EQ(code_of([&] { weighted_vote(a, big); }), ErrorCode::InvalidArgument);
}

TEST(MaxToolCall, Examples) {
  std::vector<Trajectory> ts{answered("t/r0", "A", 1, -0.1), answered("t/r1", "B", 3, -0.5), answered("t/r2", "C", 3, -0.2)};
  auto fa = max_tool_call_select(ts);
  EXPECT_EQ(fa.answer, "C");  // tie on calls, higher confidence
  EXPECT_EQ(fa.inputs_used, (std::vector<std::string>{"t/r2"}));

  std::vector<Trajectory> same{answered("t/r9", "A", 2, -0.1), answered("t/r1", "B", 2, -0.1)};
  EXPECT_EQ(max_tool_call_select(same).answer, "B");

  Trajectory unanswered = answered("t/r3", "Z", 9, -0.1);
  unanswered.final_answer.reset();
  ts.push_back(unanswered);
  EXPECT_EQ(max_tool_call_select(ts).answer, "C");
  std::vector<Trajectory> only{unanswered};
  EXPECT_EQ(code_of([&] { max_tool_call_select(only); }), ErrorCode::NoAnswers);
}

TEST(FinalAnswerJson, RoundTrip) {
  FinalAnswer f{"42", "because", SelectionMethod::WeightedVote, {"a", "b"}, {"w"}};
  json j = f;
  EXPECT_EQ(j["method"], "weighted_vote");
  EXPECT_EQ(j.get<FinalAnswer>(), f);
  EXPECT_EQ(parse_selection_method("maxtool"), SelectionMethod::MaxToolCall);
  EXPECT_THROW(parse_selection_method("coin_flip"), Error);
}
