#pragma once

// Shared helpers for the unit tests and the acceptance binary.

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pmuse/harness.hpp"
#include "pmuse/scripted.hpp"

namespace testkit {

using namespace pmuse;

inline std::filesystem::path scenario_dir() { return PMUSE_SCENARIO_DIR; }

inline std::shared_ptr<const ScriptedScenario> scenario(const std::string& id) {
  return ScriptedScenario::load(scenario_dir(), id);
}

inline json scenario_json(const std::string& id) { return io::read_json(scenario_dir() / (id + ".json")); }

inline std::string question_of(const ScriptedScenario& s, const std::string& task_id) {
  for (const auto& t : s.tasks())
    if (t.value("task_id", std::string()) == task_id) return t.at("question").get<std::string>();
  throw std::runtime_error("no task " + task_id);
}

inline std::vector<Task> tasks_of(const ScriptedScenario& s) {
  std::vector<Task> out;
  for (const auto& t : s.tasks()) out.push_back(t.get<Task>());
  return out;
}

/// Scripted model + tools over one scenario, with the concrete types kept
/// around for call counters and captured requests.
struct Rig {
  std::shared_ptr<const ScriptedScenario> scen;
  std::shared_ptr<ScriptedModel> model;
  std::shared_ptr<ScriptedSearch> search;
  std::shared_ptr<ScriptedVisit> visit;

  explicit Rig(const std::string& id)
      : scen(scenario(id)),
        model(std::make_shared<ScriptedModel>(scen)),
        search(std::make_shared<ScriptedSearch>(scen)),
        visit(std::make_shared<ScriptedVisit>(scen)) {}

  AgentEnvironment env() const {
    AgentEnvironment e;
    e.model = model;
    e.tools = make_standard_tools(search, visit);
    return e;
  }

  Backends backends() const { return {model, model, search, visit}; }

  HarnessConfig harness_config() const {
    HarnessConfig c;
    c.backends = json{{"default", {{"type", "scripted"}, {"scenario_dir", scenario_dir().string()}, {"scenario_id", scen->id()}}}};
    return c;
  }
};

/// A fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pmuse-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline Token tok(double lp, RegionTag region = RegionTag::Reasoning, std::string text = "t") {
  return {std::move(text), lp, region};
}

/// Step with the given reasoning and (optional) call logprobs.
inline Step make_step(std::uint32_t index, const std::vector<double>& reasoning, const std::optional<std::vector<double>>& call,
                      bool terminal = false) {
  Step s;
  s.index = index;
  for (double lp : reasoning) s.reasoning_tokens.push_back(tok(lp));
  if (call) {
    ToolCall c;
    c.tool_name = "search";
    c.arguments = json{{"query", json::array({"q"})}};
    for (double lp : *call) c.raw_tokens.push_back(tok(lp, RegionTag::Exploration));
    s.tool_call = c;
    s.tool_response = ToolResponse{"result", 1, false};
  }
  s.is_terminal = terminal;
  return s;
}

inline void finalize(Trajectory& t) {
  t.generated_token_count = 0;
  for (const auto& s : t.steps) t.generated_token_count += s.generated_tokens();
}

}  // namespace testkit
