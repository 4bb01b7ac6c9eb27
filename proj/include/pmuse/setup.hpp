#pragma once

// Builds the Backends bundle from a HarnessConfig. Kept apart from
// harness.hpp so that code driving only scripted backends does not pull in
// the HTTP client.

#include "pmuse/harness.hpp"
#include "pmuse/http_backends.hpp"
#include "pmuse/scripted.hpp"

namespace pmuse {

/// Named model backends plus the scenarios behind the scripted ones.
struct BackendPool {
  std::map<std::string, std::shared_ptr<ModelBackend>> models;
  std::map<std::string, std::shared_ptr<const ScriptedScenario>> scenarios;
};

inline BackendPool make_backend_pool(const HarnessConfig& config) {
  BackendPool pool;
  for (const auto& [name, spec] : config.backends.items()) {
    std::string type = spec.value("type", std::string("scripted"));
    std::shared_ptr<ModelBackend> model;
    try {
      if (type == "scripted") {
        auto scenario = ScriptedScenario::load(spec.at("scenario_dir").get<std::string>(), spec.at("scenario_id").get<std::string>());
        pool.scenarios[name] = scenario;
        model = std::make_shared<ScriptedModel>(scenario);
      } else if (type == "http") {
        model = std::make_shared<HttpModelBackend>(spec.get<HttpModelConfig>());
      } else {
        fail(ErrorCode::ConfigError, "backend '" + name + "' has unknown type '" + type + "'");
      }
    } catch (const json::exception& e) {
      fail(ErrorCode::ConfigError, "backend '" + name + "': " + e.what());
    }
    if (config.max_inflight_calls > 0) model = std::make_shared<InflightLimiter>(model, config.max_inflight_calls);
    pool.models[name] = std::move(model);
  }
  return pool;
}

namespace detail {

inline std::shared_ptr<const ScriptedScenario> tool_scenario(const BackendPool& pool, const json& spec,
                                                             const std::string& fallback, const char* tool) {
  std::string name = spec.value("backend", fallback);
  auto it = pool.scenarios.find(name);
  if (it == pool.scenarios.end())
    fail(ErrorCode::ConfigError, std::string("scripted ") + tool + " needs a scripted backend; '" + name + "' is not one");
  return it->second;
}

}  // namespace detail

inline Backends make_backends(const HarnessConfig& config, BackendPool* keep = nullptr) {
  config.validate();
  BackendPool pool = make_backend_pool(config);
  Backends b;
  b.rollout = pool.models.at(config.run.rollout_backend);
  b.aggregation = pool.models.at(config.run.aggregation_backend);

  try {
    std::string st = config.search.value("type", std::string("scripted"));
    if (st == "scripted")
      b.search = std::make_shared<ScriptedSearch>(detail::tool_scenario(pool, config.search, config.run.rollout_backend, "search"),
                                                  config.search.value("batch_cap", std::size_t{5}));
    else if (st == "http")
      b.search = std::make_shared<HttpSearch>(config.search.get<HttpSearchConfig>());
    else
      fail(ErrorCode::ConfigError, "unknown search type '" + st + "'");

    std::string vt = config.visit.value("type", std::string("scripted"));
    if (vt == "scripted") {
      b.visit = std::make_shared<ScriptedVisit>(detail::tool_scenario(pool, config.visit, config.run.rollout_backend, "visit"),
                                                config.visit.value("batch_cap", std::size_t{5}));
    } else if (vt == "http") {
      std::string extractor = config.visit.value("extractor", config.run.rollout_backend);
      auto it = pool.models.find(extractor);
      if (it == pool.models.end()) fail(ErrorCode::ConfigError, "visit extractor backend '" + extractor + "' is not configured");
      PromptSet prompts;
      if (!config.prompts_dir.empty()) prompts.override_from(config.prompts_dir);
      b.visit = std::make_shared<HttpVisit>(config.visit.get<HttpVisitConfig>(), it->second, prompts);
    } else {
      fail(ErrorCode::ConfigError, "unknown visit type '" + vt + "'");
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigError, std::string("tool configuration: ") + e.what());
  }
  if (keep) *keep = std::move(pool);
  return b;
}

}  // namespace pmuse
