#include <gtest/gtest.h>

#include "support.hpp"

using namespace pmuse;

namespace {

ModelRequest first_turn(const testkit::Rig& rig, const std::string& task, std::int64_t seed) {
  ModelRequest req;
  req.messages = detail::history_messages(rig.env(), testkit::question_of(*rig.scen, task), {});
  req.seed = seed;
  return req;
}

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST(ScriptedModel, StepZeroMatchesFixtureBytes) {
  testkit::Rig rig("scenario-basic");
  auto resp = rig.model->chat_generate(first_turn(rig, "basic", 7));
  auto node = testkit::scenario_json("scenario-basic")["nodes"]["b0"];
  std::string want = "<think>" + node["think"]["text"].get<std::string>() + "</think><tool_call>" +
                     "{\"name\":\"search\",\"arguments\":" + node["call"]["arguments"].dump() + "}" + "</tool_call>";
  EXPECT_EQ(resp.text(), want);
  EXPECT_EQ(resp.finish_reason, FinishReason::ToolCall);
  std::vector<double> lps;
  for (const auto& t : resp.assistant_tokens)
    if (!markers::is_marker(t.text)) lps.push_back(*t.logprob);
  auto want_lps = node["think"]["logprobs"].get<std::vector<double>>();
  for (double x : node["call"]["logprobs"].get<std::vector<double>>()) want_lps.push_back(x);
  EXPECT_EQ(lps, want_lps);
}

TEST(ScriptedModel, DeterministicAcrossInstances) {
  testkit::Rig a("scenario-branchy");
  testkit::Rig b("scenario-branchy");
  auto task = testkit::tasks_of(*a.scen).front().task_id;
  for (std::int64_t seed = 0; seed < 6; ++seed) {
    auto ra = a.model->chat_generate(first_turn(a, task, seed));
    EXPECT_EQ(ra, b.model->chat_generate(first_turn(b, task, seed)));
    EXPECT_EQ(ra, a.model->chat_generate(first_turn(a, task, seed)));
  }
}

TEST(ScriptedModel, OffScriptIsScriptMiss) {
  testkit::Rig rig("scenario-basic");
  ModelRequest req;
  req.messages = {{Role::System, "sys", std::nullopt, ""}, {Role::User, "An unscripted question?", std::nullopt, ""}};
  EXPECT_EQ(code_of([&] { rig.model->chat_generate(req); }), ErrorCode::ScriptMiss);

  auto good = first_turn(rig, "basic", 0);
  good.messages.push_back({Role::Assistant, "<think>something else</think><answer>1</answer>", std::nullopt, ""});
  EXPECT_EQ(code_of([&] { rig.model->chat_generate(good); }), ErrorCode::ScriptMiss);
}

TEST(ScriptedModel, MaxTokensTruncatesWithLength) {
  testkit::Rig rig("scenario-basic");
  auto req = first_turn(rig, "basic", 0);
  req.max_tokens = 3;
  auto resp = rig.model->chat_generate(req);
  EXPECT_EQ(resp.finish_reason, FinishReason::Length);
  std::size_t content = 0;
  for (const auto& t : resp.assistant_tokens) content += !markers::is_marker(t.text);
  EXPECT_EQ(content, 3u);
}

TEST(ScriptedSearch, CapitalOfFranceReturnsTenHits) {
  testkit::Rig rig("scenario-basic");
  std::vector<std::string> q{"capital of France"};
  auto out = rig.search->search(q);
  ASSERT_EQ(out.size(), 1u);
  ASSERT_EQ(out[0].size(), 10u);
  auto fixture = testkit::scenario_json("scenario-basic")["search"]["capital of France"];
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(out[0][i].title, fixture[i]["title"]);
    EXPECT_EQ(out[0][i].url, fixture[i]["url"]);
    EXPECT_EQ(out[0][i].snippet, fixture[i]["snippet"]);
  }
}

TEST(ScriptedSearch, BatchShapeAndValidation) {
  testkit::Rig rig("scenario-basic");
  std::vector<std::string> q{"capital of France", "nothing indexed here", "Zorb moons 42 confirmed"};
  auto out = rig.search->search(q);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].size(), 10u);
  EXPECT_TRUE(out[1].empty());
  EXPECT_FALSE(out[2].empty());

  std::vector<std::string> empty_query{"  "};
  EXPECT_EQ(code_of([&] { rig.search->search(empty_query); }), ErrorCode::InvalidArgument);
  std::vector<std::string> none;
  EXPECT_EQ(code_of([&] { rig.search->search(none); }), ErrorCode::InvalidArgument);
  std::vector<std::string> six(6, "capital of France");
  EXPECT_EQ(code_of([&] { rig.search->search(six); }), ErrorCode::InvalidArgument);
}

TEST(ScriptedVisit, FixtureUnreachableAndGoal) {
  testkit::Rig rig("scenario-basic");
  auto visit = testkit::scenario_json("scenario-basic")["visit"]["https://example.org/zorb-survey"];
  std::vector<std::string> urls{"https://example.org/zorb-survey", "https://nowhere.invalid/page"};
  auto out = rig.visit->visit(urls, "number of moons of Zorb");
  ASSERT_EQ(out.size(), 2u);
  ASSERT_TRUE(out[0].ok());
  EXPECT_EQ(*out[0].content, scripted_detail::expand_text(visit["number of moons of Zorb"]));
  EXPECT_FALSE(out[1].ok());
  EXPECT_FALSE(out[1].error.empty());

  // Different goals over the same page yield different extractions.
  std::vector<std::string> one{"https://example.org/zorb-survey"};
  std::set<std::string> seen;
  for (const auto& [goal, _] : visit.items()) {
    if (goal == "*") continue;
    auto r = rig.visit->visit(one, goal);
    ASSERT_TRUE(r[0].ok());
    seen.insert(*r[0].content);
  }
  EXPECT_GE(seen.size(), 2u);
  auto fallback = rig.visit->visit(one, "an unlisted goal");
  ASSERT_TRUE(fallback[0].ok());
  EXPECT_EQ(*fallback[0].content, scripted_detail::expand_text(visit["*"]));

  std::vector<std::string> bad{"not a url"};
  EXPECT_EQ(code_of([&] { rig.visit->visit(bad, "g"); }), ErrorCode::InvalidArgument);
}

TEST(Tools, ResponsesAreTruncatedToCap) {
  testkit::Rig rig("scenario-longctx");
  auto tools = rig.env().tools;
  ToolCall call;
  call.tool_name = "visit";
  call.arguments = {{"url", {"https://example.org/gazette-1888"}}, {"goal", "regatta venue 1888"}};
  auto resp = tools.invoke(call, *rig.model, ToolLimits{4096});
  EXPECT_FALSE(resp.error_flag);
  EXPECT_NE(resp.content.find("[truncated"), std::string::npos);
  EXPECT_LE(resp.token_count, 4096u + 16u);  // marker adds a handful of tokens
  EXPECT_EQ(resp.token_count, rig.model->count_tokens(resp.content));

  auto small = tools.invoke(call, *rig.model, ToolLimits{100000});
  EXPECT_EQ(small.content.find("[truncated"), std::string::npos);
  EXPECT_GT(small.token_count, 4096u);
}

TEST(Tools, TruncateKeepsWholeTokens) {
  testkit::Rig rig("scenario-basic");
  std::string s = "alpha beta gamma delta epsilon";
  EXPECT_EQ(truncate_to_tokens(s, 5, *rig.model), s);
  auto cut = truncate_to_tokens(s, 2, *rig.model);
  EXPECT_EQ(cut.substr(0, cut.find('\n')), "alpha beta");
}

TEST(Tools, UnknownToolIsErrorResponseNotThrow) {
  testkit::Rig rig("scenario-basic");
  ToolCall call;
  call.tool_name = "calculator";
  call.arguments = {{"expression", "6*7"}};
  auto resp = rig.env().tools.invoke(call, *rig.model, {});
  EXPECT_TRUE(resp.error_flag);
  EXPECT_NE(resp.content.find("calculator"), std::string::npos);

  ToolCall missing;
  missing.tool_name = "search";
  missing.arguments = json::object();
  EXPECT_TRUE(rig.env().tools.invoke(missing, *rig.model, {}).error_flag);
}

TEST(Tools, EmptyRegistryIsLegal) {
  ToolRegistry reg;
  EXPECT_TRUE(reg.empty());
  EXPECT_EQ(reg.schemas(), json::array());
  testkit::Rig rig("scenario-basic");
  EXPECT_EQ(rig.env().tools.schemas().size(), 2u);
}

TEST(TokenCount, Approximation) {
  EXPECT_EQ(approximate_token_count(""), 0u);
  EXPECT_EQ(approximate_token_count("hello world"), 2u);
  EXPECT_EQ(approximate_token_count("a, b."), 4u);
  EXPECT_EQ(approximate_token_count("{\"q\":1}"), 7u);
}

TEST(InflightLimiter, CapsConcurrency) {
  auto scen = testkit::scenario("scenario-basic");
  auto limited = std::make_shared<InflightLimiter>(std::make_shared<ScriptedModel>(scen), 2);
  testkit::Rig rig("scenario-basic");
  auto req = first_turn(rig, "basic", 1);
  parallel_for_bounded(32, 8, [&](std::size_t) { limited->chat_generate(req); });
  EXPECT_LE(limited->peak_inflight(), 2u);
  EXPECT_THROW(InflightLimiter(std::make_shared<ScriptedModel>(scen), 0), Error);
}

TEST(Retries, OnlyBackendErrorsRetry) {
  int calls = 0;
  auto r = with_retries(
      [&] {
        if (++calls < 3) fail(ErrorCode::BackendError, "flaky");
        return 5;
      },
      3, std::chrono::milliseconds(0));
  EXPECT_EQ(r, 5);
  EXPECT_EQ(calls, 3);

  calls = 0;
  EXPECT_THROW(with_retries([&]() -> int { ++calls; fail(ErrorCode::SchemaError, "bad"); }, 3, std::chrono::milliseconds(0)),
               Error);
  EXPECT_EQ(calls, 1);

  calls = 0;
  EXPECT_THROW(with_retries([&]() -> int { ++calls; fail(ErrorCode::BackendError, "down"); }, 2, std::chrono::milliseconds(0)),
               Error);
  EXPECT_EQ(calls, 3);
}
