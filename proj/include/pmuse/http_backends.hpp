#pragma once

// Live backends: an OpenAI-style chat-completions client with per-token
// logprobs and function calling, a Serper-style search client, and a visit
// tool that fetches pages and extracts from them through a model.
//
// Define CPPHTTPLIB_OPENSSL_SUPPORT (and link OpenSSL) before including this
// header to reach https endpoints.

#include <cstdlib>
#include <cstring>
#include <regex>

#include <httplib.h>

#include "pmuse/backends.hpp"
#include "pmuse/prompts.hpp"

namespace pmuse {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // path prefix, no trailing slash

  static Endpoint parse(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) fail(ErrorCode::ConfigError, "malformed endpoint url '" + url + "'");
    std::string path = m[2].matched ? m[2].str() : "";
    while (!path.empty() && path.back() == '/') path.pop_back();
    return {m[1].str(), path};
  }
};

namespace http_detail {

inline std::string env_or(const std::string& explicit_value, const std::string& env_name) {
  if (!explicit_value.empty()) return explicit_value;
  if (env_name.empty()) return {};
  const char* v = std::getenv(env_name.c_str());
  return v ? v : "";
}

inline httplib::Client make_client(const Endpoint& ep, double timeout_seconds) {
  httplib::Client cli(ep.origin);
  auto secs = static_cast<time_t>(timeout_seconds);
  auto usecs = static_cast<time_t>((timeout_seconds - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  cli.set_follow_location(true);
  return cli;
}

// One POST; transport failures and 429/5xx are BackendError (retryable),
// other non-2xx statuses are reported with the body.
inline json post_json(const Endpoint& ep, const std::string& path, const json& body, const httplib::Headers& headers,
                      double timeout_seconds) {
  auto cli = make_client(ep, timeout_seconds);
  auto res = cli.Post(ep.path + path, headers, body.dump(), "application/json");
  if (!res) fail(ErrorCode::BackendError, "POST " + ep.origin + ep.path + path + ": " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    fail(ErrorCode::BackendError, "POST " + ep.origin + ep.path + path + " returned HTTP " + std::to_string(res->status) +
                                      ": " + res->body.substr(0, 512));
  json j = json::parse(res->body, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::BackendError, "response from " + ep.origin + ep.path + path + " is not JSON");
  return j;
}

}  // namespace http_detail

// ---------------------------------------------------------------------------
// Chat completions
// ---------------------------------------------------------------------------

struct HttpModelConfig {
  std::string base_url = "http://localhost:8000/v1";
  std::string model;
  std::string api_key;                       // wins over api_key_env
  std::string api_key_env = "OPENAI_API_KEY";
  std::optional<std::string> tokenize_path;  // e.g. "/tokenize" (vLLM-style); else approximate counts
  double timeout_seconds = 600.0;
  int retries = 3;
  std::optional<TokenCosts> costs;
};

inline void from_json(const json& j, HttpModelConfig& c) {
  c.base_url = j.value("base_url", c.base_url);
  c.model = j.value("model", c.model);
  c.api_key = j.value("api_key", c.api_key);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  if (j.contains("tokenize_path")) c.tokenize_path = j.at("tokenize_path").get<std::string>();
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.retries = j.value("retries", c.retries);
  if (j.contains("costs")) c.costs = TokenCosts{j.at("costs").value("hot", 1.0), j.at("costs").value("cold", 1.0)};
}

namespace http_detail {

inline json message_to_wire(const Message& m) {
  json j{{"role", to_string(m.role)}, {"content", m.content}};
  if (m.role == Role::Assistant && m.tool_call) {
    j["tool_calls"] = json::array({{{"id", m.tool_call_id},
                                    {"type", "function"},
                                    {"function", {{"name", m.tool_call->tool_name}, {"arguments", m.tool_call->arguments.dump()}}}}});
  }
  if (m.role == Role::Tool) j["tool_call_id"] = m.tool_call_id;
  return j;
}

inline FinishReason parse_finish(const std::string& s) {
  if (s == "length") return FinishReason::Length;
  if (s == "tool_calls" || s == "function_call") return FinishReason::ToolCall;
  return FinishReason::Terminal;
}

}  // namespace http_detail

/// Parses one chat-completions response body. Separate from the client so it
/// can be tested on canned payloads.
inline ModelResponse parse_chat_completion(const json& body, bool logprobs_required) {
  const auto& choices = body.value("choices", json::array());
  if (!choices.is_array() || choices.empty()) fail(ErrorCode::BackendError, "response has no choices");
  const json& choice = choices.front();
  const json& message = choice.value("message", json::object());

  ModelResponse out;
  out.finish_reason = http_detail::parse_finish(choice.value("finish_reason", std::string("stop")));

  std::string content = message.contains("content") && message["content"].is_string() ? message["content"].get<std::string>() : "";
  const json* lp = nullptr;
  if (auto it = choice.find("logprobs"); it != choice.end() && it->is_object()) {
    if (auto c = it->find("content"); c != it->end() && c->is_array()) lp = &*c;
  }
  if (lp) {
    for (const auto& t : *lp) {
      RawToken rt{t.value("token", std::string()), std::nullopt};
      if (t.contains("logprob") && t["logprob"].is_number()) rt.logprob = t["logprob"].get<double>();
      out.assistant_tokens.push_back(std::move(rt));
    }
  } else if (logprobs_required && !content.empty()) {
    fail(ErrorCode::BackendError,
         "endpoint did not return per-token logprobs; the rollout protocol requires logprobs=true support");
  } else if (!content.empty()) {
    out.assistant_tokens.push_back({content, std::nullopt});
  }
  if (logprobs_required)
    for (const auto& t : out.assistant_tokens)
      if (!t.logprob) fail(ErrorCode::BackendError, "endpoint returned a token without a logprob");

  for (const auto& call : message.value("tool_calls", json::array())) {
    const json& fn = call.value("function", json::object());
    out.structured_tool_calls.push_back({fn.value("name", std::string()), fn.value("arguments", std::string("{}"))});
  }
  if (!out.structured_tool_calls.empty() && out.finish_reason == FinishReason::Terminal)
    out.finish_reason = FinishReason::ToolCall;
  return out;
}

class HttpModelBackend : public ModelBackend {
 public:
  explicit HttpModelBackend(HttpModelConfig config)
      : config_(std::move(config)), endpoint_(Endpoint::parse(config_.base_url)) {
    if (config_.model.empty()) fail(ErrorCode::ConfigError, "http model backend needs a model name");
  }

  ModelResponse chat_generate(const ModelRequest& req) override {
    json body{{"model", config_.model},
              {"temperature", req.temperature},
              {"seed", req.seed},
              {"max_tokens", req.max_tokens},
              {"logprobs", req.logprobs_required}};
    json messages = json::array();
    for (const auto& m : req.messages) messages.push_back(http_detail::message_to_wire(m));
    body["messages"] = std::move(messages);
    if (!req.tool_schemas.empty()) body["tools"] = req.tool_schemas;

    json reply = with_retries([&] { return http_detail::post_json(endpoint_, "/chat/completions", body, headers(), config_.timeout_seconds); },
                              config_.retries);
    // Outside the retry loop: a missing capability is not transient.
    return parse_chat_completion(reply, req.logprobs_required);
  }

  std::uint64_t count_tokens(std::string_view s) const override {
    if (!config_.tokenize_path) return approximate_token_count(s);
    json reply = with_retries([&] {
      return http_detail::post_json(endpoint_, *config_.tokenize_path, {{"model", config_.model}, {"prompt", std::string(s)}},
                                    headers(), config_.timeout_seconds);
    }, config_.retries);
    if (reply.contains("count")) return reply["count"].get<std::uint64_t>();
    if (reply.contains("tokens")) return reply["tokens"].size();
    fail(ErrorCode::BackendError, "tokenize endpoint returned neither 'count' nor 'tokens'");
  }

  std::optional<TokenCosts> costs() const override { return config_.costs; }

 private:
  httplib::Headers headers() const {
    httplib::Headers h;
    auto key = http_detail::env_or(config_.api_key, config_.api_key_env);
    if (!key.empty()) h.emplace("Authorization", "Bearer " + key);
    return h;
  }

  HttpModelConfig config_;
  Endpoint endpoint_;
};

// ---------------------------------------------------------------------------
// Search
// ---------------------------------------------------------------------------

struct HttpSearchConfig {
  std::string endpoint = "https://google.serper.dev/search";
  std::string api_key;
  std::string api_key_env = "SERPER_API_KEY";
  double timeout_seconds = 30.0;
  int retries = 3;
  std::size_t batch_cap = 5;
};

inline void from_json(const json& j, HttpSearchConfig& c) {
  c.endpoint = j.value("endpoint", c.endpoint);
  c.api_key = j.value("api_key", c.api_key);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.retries = j.value("retries", c.retries);
  c.batch_cap = j.value("batch_cap", c.batch_cap);
}

/// POSTs {"q", "num": 10} per query and reads "organic": [{title, link, snippet}].
class HttpSearch : public SearchBackend {
 public:
  explicit HttpSearch(HttpSearchConfig config)
      : SearchBackend(config.batch_cap), config_(std::move(config)), endpoint_(Endpoint::parse(config_.endpoint)) {}

 protected:
  std::vector<std::vector<SearchHit>> do_search(std::span<const std::string> queries) override {
    httplib::Headers h;
    auto key = http_detail::env_or(config_.api_key, config_.api_key_env);
    if (!key.empty()) h.emplace("X-API-KEY", key);
    std::vector<std::vector<SearchHit>> out;
    for (const auto& q : queries) {
      json reply = with_retries([&] {
        return http_detail::post_json(endpoint_, "", {{"q", q}, {"num", kSearchTopN}}, h, config_.timeout_seconds);
      }, config_.retries);
      std::vector<SearchHit> hits;
      for (const auto& r : reply.value("organic", json::array())) {
        if (hits.size() == kSearchTopN) break;
        hits.push_back({r.value("title", std::string()), r.value("link", std::string()), r.value("snippet", std::string())});
      }
      out.push_back(std::move(hits));
    }
    return out;
  }

 private:
  HttpSearchConfig config_;
  Endpoint endpoint_;
};

// ---------------------------------------------------------------------------
// Visit
// ---------------------------------------------------------------------------

struct HttpVisitConfig {
  double timeout_seconds = 30.0;
  double per_host_delay_seconds = 0.0;
  std::uint64_t page_token_cap = 32768;
  std::size_t batch_cap = 5;
};

inline void from_json(const json& j, HttpVisitConfig& c) {
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.per_host_delay_seconds = j.value("per_host_delay_seconds", c.per_host_delay_seconds);
  c.page_token_cap = j.value("page_token_cap", c.page_token_cap);
  c.batch_cap = j.value("batch_cap", c.batch_cap);
}

/// Crude HTML to text: drops script/style blocks and tags, decodes the
/// common entities, collapses whitespace.
inline std::string html_to_text(const std::string& html) {
  static const std::regex blocks(R"(<(script|style|noscript)[^>]*>[\s\S]*?</\1\s*>)", std::regex::icase);
  static const std::regex tags(R"(<[^>]*>)");
  std::string s = std::regex_replace(html, blocks, " ");
  s = std::regex_replace(s, tags, " ");
  static const std::pair<const char*, const char*> entities[] = {
      {"&amp;", "&"}, {"&lt;", "<"}, {"&gt;", ">"}, {"&quot;", "\""}, {"&#39;", "'"}, {"&nbsp;", " "}};
  for (const auto& [from, to] : entities) {
    std::string f = from;
    for (std::size_t pos = 0; (pos = s.find(f, pos)) != std::string::npos; pos += std::strlen(to)) s.replace(pos, f.size(), to);
  }
  return text::collapse_whitespace(s);
}

class HttpVisit : public VisitBackend {
 public:
  HttpVisit(HttpVisitConfig config, std::shared_ptr<ModelBackend> extractor, PromptSet prompts = {})
      : VisitBackend(config.batch_cap), config_(config), extractor_(std::move(extractor)), prompts_(std::move(prompts)) {}

 protected:
  std::vector<VisitResult> do_visit(std::span<const std::string> urls, const std::string& goal) override {
    std::vector<VisitResult> out;
    for (const auto& url : urls) {
      VisitResult r{url, std::nullopt, {}};
      try {
        r.content = extract(url, goal, fetch(url));
      } catch (const Error& e) {
        r.error = e.what();
      }
      out.push_back(std::move(r));
    }
    return out;
  }

 private:
  std::string fetch(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/?#]+)([^#]*))");
    std::smatch m;
    if (!std::regex_search(url, m, re)) fail(ErrorCode::InvalidArgument, "malformed url '" + url + "'");
    wait_for_host(m[1].str());
    auto cli = http_detail::make_client({m[1].str(), ""}, config_.timeout_seconds);
    std::string path = m[2].str().empty() ? "/" : m[2].str();
    auto res = cli.Get(path);
    if (!res) fail(ErrorCode::BackendError, "GET " + url + ": " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300) fail(ErrorCode::BackendError, "GET " + url + " returned HTTP " + std::to_string(res->status));
    return html_to_text(res->body);
  }

  std::string extract(const std::string& url, const std::string& goal, const std::string& page) {
    std::map<std::string, std::string, std::less<>> vars{
        {"url", url}, {"goal", goal}, {"page", truncate_to_tokens(page, config_.page_token_cap, *extractor_)}};
    ModelRequest req;
    req.purpose = Purpose::VisitExtract;
    req.subject = url;
    req.logprobs_required = false;
    req.messages.push_back({Role::User, text::substitute(prompts_.visit_extract, [&](std::string_view k) -> const std::string* {
                              auto it = vars.find(k);
                              return it == vars.end() ? nullptr : &it->second;
                            }), std::nullopt, {}});
    return extractor_->chat_generate(req).text();
  }

  void wait_for_host(const std::string& host) {
    if (config_.per_host_delay_seconds <= 0.0) return;
    std::unique_lock lock(mu_);
    auto now = std::chrono::steady_clock::now();
    auto delay = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(config_.per_host_delay_seconds));
    auto& next = next_allowed_[host];
    auto wait_until = std::max(now, next);
    next = wait_until + delay;
    lock.unlock();
    std::this_thread::sleep_until(wait_until);
  }

  HttpVisitConfig config_;
  std::shared_ptr<ModelBackend> extractor_;
  PromptSet prompts_;
  std::mutex mu_;
  std::map<std::string, std::chrono::steady_clock::time_point> next_allowed_;
};

}  // namespace pmuse
