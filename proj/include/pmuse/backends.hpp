#pragma once

/**
 * Backend interfaces
 *
 * The engine talks to a model and to two tools (search, visit) only through
 * the interfaces below. Each has a live HTTP implementation
 * (pmuse/http_backends.hpp) and a deterministic scripted one
 * (pmuse/scripted.hpp); nothing upstream can tell them apart except through
 * configuration.
 */

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "pmuse/model.hpp"

namespace pmuse {

enum class Role { System, User, Assistant, Tool };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
    case Role::Tool: return "tool";
  }
  return "user";
}

struct Message {
  Role role = Role::User;
  std::string content;
  std::optional<ToolCall> tool_call;  // assistant turns that invoked a tool
  std::string tool_call_id;           // pairs an assistant call with its tool turn
};

/// What a request is for. Live backends ignore it; the simulator uses it to
/// pick the matching fixture table.
enum class Purpose { Rollout, Compress, Aggregate, ExtractEntities, VisitExtract, Judge };

struct ModelRequest {
  std::vector<Message> messages;
  json tool_schemas = json::array();
  double temperature = 0.0;
  std::int64_t seed = 0;
  bool logprobs_required = true;
  std::uint64_t max_tokens = 4096;
  Purpose purpose = Purpose::Rollout;
  std::string subject;  // trajectory id, question, ... depending on purpose
};

enum class FinishReason { Terminal, ToolCall, Length };

struct ModelResponse {
  std::vector<RawToken> assistant_tokens;
  std::vector<StructuredCall> structured_tool_calls;
  FinishReason finish_reason = FinishReason::Terminal;

  std::string text() const {
    std::string out;
    for (const auto& t : assistant_tokens) out += t.text;
    return out;
  }

  bool operator==(const ModelResponse&) const = default;
};

/// Per-token decoding costs: `hot` with KV reuse, `cold` when regenerating.
struct TokenCosts {
  double hot = 1.0;
  double cold = 1.0;
};

/// Alnum runs (UTF-8 continuation bytes included) plus each punctuation mark.
inline std::uint64_t approximate_token_count(std::string_view s) {
  std::uint64_t n = 0;
  bool in_word = false;
  for (unsigned char c : s) {
    bool word = std::isalnum(c) || c >= 0x80 || c == '_';
    if (word) {
      if (!in_word) ++n;
      in_word = true;
    } else {
      in_word = false;
      if (!std::isspace(c)) ++n;
    }
  }
  return n;
}

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  virtual ModelResponse chat_generate(const ModelRequest& request) = 0;
  virtual std::uint64_t count_tokens(std::string_view s) const { return approximate_token_count(s); }
  virtual std::optional<TokenCosts> costs() const { return std::nullopt; }
};

// ---------------------------------------------------------------------------
// Tools
// ---------------------------------------------------------------------------

struct SearchHit {
  std::string title;
  std::string url;
  std::string snippet;

  bool operator==(const SearchHit&) const = default;
};

inline void to_json(json& j, const SearchHit& h) {
  j = json{{"title", h.title}, {"url", h.url}, {"snippet", h.snippet}};
}

inline void from_json(const json& j, SearchHit& h) {
  h.title = j.value("title", std::string());
  h.url = j.value("url", std::string());
  h.snippet = j.value("snippet", std::string());
}

inline constexpr std::size_t kSearchTopN = 10;

class SearchBackend {
 public:
  explicit SearchBackend(std::size_t batch_cap = 5) : batch_cap_(batch_cap) {}
  virtual ~SearchBackend() = default;

  /// One ranked list (at most 10 hits) per query, in input order.
  std::vector<std::vector<SearchHit>> search(std::span<const std::string> queries) {
    if (queries.empty() || queries.size() > batch_cap_)
      fail(ErrorCode::InvalidArgument, "search takes 1.." + std::to_string(batch_cap_) + " queries");
    for (const auto& q : queries)
      if (text::trim(q).empty()) fail(ErrorCode::InvalidArgument, "empty search query");
    auto out = do_search(queries);
    if (out.size() != queries.size()) fail(ErrorCode::BackendError, "search backend returned the wrong shape");
    for (auto& hits : out)
      if (hits.size() > kSearchTopN) hits.resize(kSearchTopN);
    return out;
  }

  std::size_t batch_cap() const { return batch_cap_; }

 protected:
  virtual std::vector<std::vector<SearchHit>> do_search(std::span<const std::string> queries) = 0;

 private:
  std::size_t batch_cap_;
};

struct VisitResult {
  std::string url;
  std::optional<std::string> content;
  std::string error;  // set when content is absent

  bool ok() const { return content.has_value(); }
};

inline bool is_valid_url(std::string_view url) {
  std::string_view rest;
  if (text::starts_with(url, "http://"))
    rest = url.substr(7);
  else if (text::starts_with(url, "https://"))
    rest = url.substr(8);
  else
    return false;
  if (rest.empty() || rest.front() == '/' || rest.front() == ':') return false;
  for (char c : url)
    if (text::is_space(c)) return false;
  return true;
}

class VisitBackend {
 public:
  explicit VisitBackend(std::size_t batch_cap = 5) : batch_cap_(batch_cap) {}
  virtual ~VisitBackend() = default;

  /// Goal-conditioned extraction per url; a failed url yields an error entry.
  std::vector<VisitResult> visit(std::span<const std::string> urls, const std::string& goal) {
    if (urls.empty() || urls.size() > batch_cap_)
      fail(ErrorCode::InvalidArgument, "visit takes 1.." + std::to_string(batch_cap_) + " urls");
    for (const auto& u : urls)
      if (!is_valid_url(u)) fail(ErrorCode::InvalidArgument, "malformed url '" + u + "'");
    auto out = do_visit(urls, goal);
    if (out.size() != urls.size()) fail(ErrorCode::BackendError, "visit backend returned the wrong shape");
    return out;
  }

  std::size_t batch_cap() const { return batch_cap_; }

 protected:
  virtual std::vector<VisitResult> do_visit(std::span<const std::string> urls, const std::string& goal) = 0;

 private:
  std::size_t batch_cap_;
};

/// Cuts `content` to at most `cap` tokens and appends a truncation marker.
inline std::string truncate_to_tokens(const std::string& content, std::uint64_t cap, const ModelBackend& counter) {
  if (counter.count_tokens(content) <= cap) return content;
  std::size_t lo = 0;
  std::size_t hi = content.size();
  while (lo < hi) {
    std::size_t mid = lo + (hi - lo + 1) / 2;
    if (counter.count_tokens(std::string_view(content).substr(0, mid)) <= cap)
      lo = mid;
    else
      hi = mid - 1;
  }
  // Back off to a whitespace boundary so no token is split.
  std::size_t cut = lo;
  while (cut > 0 && cut < content.size() && !text::is_space(content[cut])) --cut;
  if (cut == 0) cut = lo;
  return content.substr(0, cut) + "\n[truncated: response exceeded " + std::to_string(cap) + " tokens]";
}

struct ToolLimits {
  std::uint64_t response_token_cap = 4096;
};

inline json search_tool_schema() {
  return json::parse(R"({
    "type": "function",
    "function": {
      "name": "search",
      "description": "Batched web search. Returns the top-10 results for each query.",
      "parameters": {
        "type": "object",
        "properties": {
          "query": {"type": "array", "items": {"type": "string"}, "description": "One or more search queries."}
        },
        "required": ["query"]
      }
    }
  })");
}

inline json visit_tool_schema() {
  return json::parse(R"({
    "type": "function",
    "function": {
      "name": "visit",
      "description": "Fetch one or more webpages and extract the information relevant to the goal.",
      "parameters": {
        "type": "object",
        "properties": {
          "url": {"type": "array", "items": {"type": "string"}},
          "goal": {"type": "string"}
        },
        "required": ["url", "goal"]
      }
    }
  })");
}

namespace detail {

inline std::vector<std::string> string_or_list(const json& args, const char* key) {
  auto it = args.find(key);
  if (it == args.end()) fail(ErrorCode::InvalidArgument, std::string("missing argument '") + key + "'");
  std::vector<std::string> out;
  if (it->is_string()) {
    out.push_back(it->get<std::string>());
  } else if (it->is_array()) {
    for (const auto& v : *it) {
      if (!v.is_string()) fail(ErrorCode::InvalidArgument, std::string("argument '") + key + "' must hold strings");
      out.push_back(v.get<std::string>());
    }
  } else {
    fail(ErrorCode::InvalidArgument, std::string("argument '") + key + "' must be a string or list");
  }
  return out;
}

}  // namespace detail

inline std::string format_search_results(std::span<const std::string> queries,
                                         const std::vector<std::vector<SearchHit>>& results) {
  std::string out;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (i) out += "\n";
    out += "## Search results for \"" + queries[i] + "\"\n";
    if (results[i].empty()) {
      out += "No results.\n";
      continue;
    }
    for (std::size_t r = 0; r < results[i].size(); ++r) {
      const auto& h = results[i][r];
      out += std::to_string(r + 1) + ". [" + h.title + "](" + h.url + ")\n   " + h.snippet + "\n";
    }
  }
  return out;
}

inline std::string format_visit_results(const std::vector<VisitResult>& results) {
  std::string out;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (i) out += "\n";
    out += "## " + results[i].url + "\n";
    out += results[i].ok() ? *results[i].content : "[error] " + results[i].error;
    out += "\n";
  }
  return out;
}

/// Named tools the rollout loop may call. An empty registry is legal and is
/// what aggregation uses.
class ToolRegistry {
 public:
  using Handler = std::function<std::string(const json& arguments)>;

  void add(std::string name, json schema, Handler handler) {
    schemas_.push_back(std::move(schema));
    handlers_.emplace(std::move(name), std::move(handler));
  }

  bool empty() const { return handlers_.empty(); }
  bool contains(const std::string& name) const { return handlers_.count(name) != 0; }
  const json& schemas() const { return schemas_; }

  /// Runs a tool; failures become errored responses so the loop continues.
  ToolResponse invoke(const ToolCall& call, const ModelBackend& counter, const ToolLimits& limits) const {
    ToolResponse resp;
    auto it = handlers_.find(call.tool_name);
    if (it == handlers_.end()) {
      resp.content = "[error] unknown tool '" + call.tool_name + "'";
      resp.error_flag = true;
    } else {
      try {
        resp.content = it->second(call.arguments);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::InvalidArgument && e.code() != ErrorCode::BackendError) throw;
        resp.content = std::string("[error] ") + e.what();
        resp.error_flag = true;
      }
    }
    resp.content = truncate_to_tokens(resp.content, limits.response_token_cap, counter);
    resp.token_count = counter.count_tokens(resp.content);
    return resp;
  }

 private:
  json schemas_ = json::array();
  std::map<std::string, Handler, std::less<>> handlers_;
};

/// Registry exposing the two standard tools.
inline ToolRegistry make_standard_tools(std::shared_ptr<SearchBackend> search, std::shared_ptr<VisitBackend> visit) {
  ToolRegistry reg;
  reg.add("search", search_tool_schema(), [search](const json& args) {
    auto queries = detail::string_or_list(args, "query");
    return format_search_results(queries, search->search(queries));
  });
  reg.add("visit", visit_tool_schema(), [visit](const json& args) {
    auto urls = detail::string_or_list(args, "url");
    std::string goal = args.contains("goal") && args["goal"].is_string() ? args["goal"].get<std::string>() : "";
    return format_visit_results(visit->visit(urls, goal));
  });
  return reg;
}

// ---------------------------------------------------------------------------
// Decorators
// ---------------------------------------------------------------------------

/// Caps in-flight calls to a shared backend across concurrent executions.
class InflightLimiter : public ModelBackend {
 public:
  InflightLimiter(std::shared_ptr<ModelBackend> inner, std::size_t cap) : inner_(std::move(inner)), cap_(cap) {
    if (cap_ == 0) fail(ErrorCode::ConfigError, "in-flight cap must be positive");
  }

  ModelResponse chat_generate(const ModelRequest& request) override {
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return inflight_ < cap_; });
      ++inflight_;
      peak_ = std::max(peak_, inflight_);
    }
    struct Release {
      InflightLimiter* self;
      ~Release() {
        std::lock_guard lock(self->mu_);
        --self->inflight_;
        self->cv_.notify_one();
      }
    } release{this};
    return inner_->chat_generate(request);
  }

  std::uint64_t count_tokens(std::string_view s) const override { return inner_->count_tokens(s); }
  std::optional<TokenCosts> costs() const override { return inner_->costs(); }

  std::size_t peak_inflight() const {
    std::lock_guard lock(mu_);
    return peak_;
  }

 private:
  std::shared_ptr<ModelBackend> inner_;
  std::size_t cap_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::size_t inflight_ = 0;
  std::size_t peak_ = 0;
};

/// Retries transport failures (BackendError) with exponential backoff:
/// `retries` extra attempts after the first.
template <typename Fn>
auto with_retries(Fn&& fn, int retries = 3, std::chrono::milliseconds base_delay = std::chrono::milliseconds(200)) {
  for (int attempt = 0;; ++attempt) {
    try {
      return fn();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BackendError || attempt >= retries) throw;
    }
    std::this_thread::sleep_for(base_delay * (1 << attempt));
  }
}

}  // namespace pmuse
