#pragma once

/**
 * Scripted backends
 *
 * A scenario is a closed-world script: for every conversation the script can
 * itself produce, and every seed, there is exactly one model response. The
 * script is a graph of nodes rooted at each task question. A node either
 * holds one assistant turn (think tokens, then a tool call or an answer) and
 * a `next` node, or a list of `variants` chosen by `seed mod n`. A request is
 * resolved by walking the graph along the assistant turns already in the
 * conversation, then picking the variant for the request's seed. Anything
 * off-script is a ScriptMiss, never an improvised reply.
 *
 * Compression, aggregation, extraction and judge requests are served from
 * per-scenario tables when present, otherwise by small deterministic rules
 * that read the tagged prompt content.
 */

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <tuple>

#include "pmuse/backends.hpp"
#include "pmuse/transcript.hpp"

namespace pmuse {

namespace scripted_detail {

inline const std::vector<std::string>& filler_vocabulary() {
  static const std::vector<std::string> words = {
      "archive", "record",  "listed",  "during",   "council", "harbor",  "river",  "annual",   "report",
      "survey",  "notes",   "founded", "regional", "museum",  "station", "library", "bridge",  "estate",
      "village", "market",  "charter", "register", "parish",  "district", "college", "journal", "edition",
      "section", "archive", "index",   "column",   "page",    "entry",   "census",  "catalog", "volume"};
  return words;
}

inline std::string filler_text(std::size_t words, std::size_t salt) {
  const auto& vocab = filler_vocabulary();
  std::string out;
  for (std::size_t i = 0; i < words; ++i) {
    if (i) out += ' ';
    out += vocab[(i * 7 + salt) % vocab.size()];
  }
  return out;
}

/// Text fixture value: a string, or {"filler": n, "prefix": s, "suffix": s, "salt": k}.
inline std::string expand_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_object() && v.contains("filler")) {
    std::string out = v.value("prefix", std::string());
    std::string body = filler_text(v.at("filler").get<std::size_t>(), v.value("salt", std::size_t{0}));
    if (!out.empty() && !body.empty()) out += ' ';
    out += body;
    std::string suffix = v.value("suffix", std::string());
    if (!suffix.empty()) out += ' ' + suffix;
    return out;
  }
  fail(ErrorCode::SchemaError, "text fixture must be a string or a filler object");
}

/// Splits at whitespace while keeping it attached, so concatenation is exact.
inline std::vector<std::string> word_pieces(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = i;
    while (j < s.size() && text::is_space(s[j])) ++j;
    while (j < s.size() && !text::is_space(s[j])) ++j;
    out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string> split_words_spaced(std::string_view s) {
  auto words = text::split_whitespace(s);
  for (std::size_t i = 1; i < words.size(); ++i) words[i] = " " + words[i];
  return words;
}

inline std::vector<std::string> chunk(std::string_view s, std::size_t k) {
  if (k == 0 || k > s.size()) fail(ErrorCode::SchemaError, "cannot split tool-call payload into " + std::to_string(k) + " tokens");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t b = i * s.size() / k;
    std::size_t e = (i + 1) * s.size() / k;
    out.emplace_back(s.substr(b, e - b));
  }
  return out;
}

inline std::vector<RawToken> parse_token_segments(const json& spec, double default_logprob) {
  std::vector<RawToken> out;
  auto push_words = [&](const std::vector<std::string>& words, const json* lps, double lp) {
    if (lps && lps->size() != words.size())
      fail(ErrorCode::SchemaError, "logprob list length does not match word count");
    for (std::size_t i = 0; i < words.size(); ++i) {
      bool lead = !out.empty() && i == 0;
      out.push_back({(lead ? " " : "") + words[i], lps ? (*lps)[i].get<double>() : lp});
    }
  };
  auto one = [&](const json& seg) {
    if (seg.is_string()) {
      push_words(split_words_spaced(seg.get<std::string>()), nullptr, default_logprob);
    } else if (seg.is_array() && seg.size() == 2 && seg[0].is_string()) {
      out.push_back({seg[0].get<std::string>(), seg[1].get<double>()});
    } else if (seg.is_object() && seg.contains("filler")) {
      auto words = split_words_spaced(filler_text(seg.at("filler").get<std::size_t>(), seg.value("salt", std::size_t{0})));
      push_words(words, nullptr, seg.value("logprob", default_logprob));
    } else if (seg.is_object() && seg.contains("text")) {
      auto words = split_words_spaced(seg.at("text").get<std::string>());
      const json* lps = seg.contains("logprobs") ? &seg.at("logprobs") : nullptr;
      push_words(words, lps, seg.value("logprob", default_logprob));
    } else {
      fail(ErrorCode::SchemaError, "unrecognized token segment: " + seg.dump());
    }
  };
  if (spec.is_array() && !(spec.size() == 2 && spec[0].is_string() && spec[1].is_number()))
    for (const auto& seg : spec) one(seg);
  else
    one(spec);
  return out;
}

inline std::vector<RawToken> text_tokens(std::string_view s, double logprob) {
  std::vector<RawToken> out;
  for (auto& piece : word_pieces(s)) out.push_back({std::move(piece), logprob});
  return out;
}

}  // namespace scripted_detail

class ScriptedScenario {
 public:
  static std::shared_ptr<const ScriptedScenario> from_json(const json& doc) {
    auto s = std::shared_ptr<ScriptedScenario>(new ScriptedScenario());
    s->load(doc);
    return s;
  }

  static std::shared_ptr<const ScriptedScenario> load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::ConfigError, "cannot open scenario file " + path.string());
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) fail(ErrorCode::ConfigError, "scenario file is not valid JSON: " + path.string());
    return from_json(doc);
  }

  /// Scenario fixtures live one per file: `<dir>/<scenario_id>.json`.
  static std::shared_ptr<const ScriptedScenario> load(const std::filesystem::path& dir, const std::string& scenario_id) {
    auto s = load_file(dir / (scenario_id + ".json"));
    if (s->id() != scenario_id)
      fail(ErrorCode::ConfigError, "scenario file declares id '" + s->id() + "', expected '" + scenario_id + "'");
    return s;
  }

  const std::string& id() const { return id_; }
  TokenCosts costs() const { return costs_; }
  const std::vector<json>& tasks() const { return tasks_; }

  ModelResponse respond(const ModelRequest& req) const {
    switch (req.purpose) {
      case Purpose::Rollout: return respond_rollout(req);
      case Purpose::Compress: return text_response(respond_compress(req));
      case Purpose::Aggregate: return text_response(respond_aggregate(req));
      case Purpose::ExtractEntities: return text_response(respond_extract(req));
      case Purpose::Judge: return text_response(respond_judge(req));
      case Purpose::VisitExtract: break;
    }
    fail(ErrorCode::ScriptMiss, "scenario has no table for this request purpose");
  }

  std::vector<SearchHit> search_hits(const std::string& query) const {
    auto it = search_.find(text::collapse_whitespace(query));
    return it == search_.end() ? std::vector<SearchHit>{} : it->second;
  }

  VisitResult visit_page(const std::string& url, const std::string& goal) const {
    VisitResult r{url, std::nullopt, {}};
    auto it = visit_.find(url);
    if (it == visit_.end()) {
      r.error = "unreachable: " + url;
      return r;
    }
    auto g = it->second.find(text::collapse_whitespace(goal));
    if (g == it->second.end()) g = it->second.find("*");
    if (g == it->second.end()) {
      r.error = "no content for goal";
      return r;
    }
    r.content = g->second;
    return r;
  }

 private:
  struct Node {
    std::vector<std::size_t> variants;
    std::vector<RawToken> stream;
    std::vector<StructuredCall> structured;
    FinishReason finish = FinishReason::Terminal;
    std::optional<std::size_t> next;
    std::optional<std::string> rendered;  // normalized history form of this turn
  };

  ScriptedScenario() = default;

  static ModelResponse text_response(const std::string& s) {
    ModelResponse r;
    r.assistant_tokens = scripted_detail::text_tokens(s, -0.05);
    r.finish_reason = FinishReason::Terminal;
    return r;
  }

  void load(const json& doc) {
    id_ = doc.at("scenario_id").get<std::string>();
    wire_structured_ = doc.value("wire", std::string("markers")) == "structured";
    default_logprob_ = doc.value("default_logprob", -0.1);
    if (auto c = doc.find("costs"); c != doc.end()) {
      costs_.hot = c->value("hot", 1.0);
      costs_.cold = c->value("cold", costs_.hot);
    }

    if (auto named = doc.find("nodes"); named != doc.end()) {
      for (const auto& [name, _] : named->items()) {
        names_[name] = nodes_.size();
        nodes_.emplace_back();
      }
      for (const auto& [name, body] : named->items()) parse_node_into(names_.at(name), body);
    }

    for (const auto& task : doc.at("tasks")) {
      std::string q = text::collapse_whitespace(task.at("question").get<std::string>());
      roots_[q] = node_ref(task.at("script"));
      tasks_.push_back(task);
    }

    if (auto s = doc.find("search"); s != doc.end())
      for (const auto& [q, hits] : s->items()) {
        std::vector<SearchHit> list;
        for (const auto& h : hits) {
          SearchHit hit = h.get<SearchHit>();
          if (h.contains("snippet")) hit.snippet = scripted_detail::expand_text(h.at("snippet"));
          list.push_back(std::move(hit));
        }
        search_[text::collapse_whitespace(q)] = std::move(list);
      }
    if (auto v = doc.find("visit"); v != doc.end())
      for (const auto& [url, body] : v->items()) {
        auto& goals = visit_[url];
        if (body.is_object() && !body.contains("filler"))
          for (const auto& [goal, content] : body.items())
            goals[goal == "*" ? goal : text::collapse_whitespace(goal)] = scripted_detail::expand_text(content);
        else
          goals["*"] = scripted_detail::expand_text(body);
      }
    auto attempt_table = [&](const char* key, std::map<std::string, std::vector<std::string>>& table) {
      if (auto t = doc.find(key); t != doc.end())
        for (const auto& [subject, attempts] : t->items()) {
          auto& list = table[subject];
          for (const auto& a : attempts.is_array() ? attempts : json::array({attempts}))
            list.push_back(a.is_string() ? a.get<std::string>() : a.dump());
        }
    };
    attempt_table("compress", compress_);
    attempt_table("extract", extract_);
    if (auto a = doc.find("aggregate"); a != doc.end())
      for (const auto& [question, answer] : a->items()) aggregate_[text::collapse_whitespace(question)] = answer;
  }

  std::size_t node_ref(const json& j) {
    if (j.is_string()) {
      auto it = names_.find(j.get<std::string>());
      if (it == names_.end()) fail(ErrorCode::SchemaError, "unknown script node '" + j.get<std::string>() + "'");
      return it->second;
    }
    std::size_t idx = nodes_.size();
    nodes_.emplace_back();
    parse_node_into(idx, j);
    return idx;
  }

  void parse_node_into(std::size_t idx, const json& j) {
    if (j.contains("variants")) {
      std::vector<std::size_t> vars;
      for (const auto& v : j.at("variants")) vars.push_back(node_ref(v));
      if (vars.empty()) fail(ErrorCode::SchemaError, "variant list is empty");
      nodes_[idx].variants = std::move(vars);
      return;
    }

    Node n;
    auto marker = [](std::string_view m) { return RawToken{std::string(m), 0.0}; };
    if (j.contains("raw")) {
      for (const auto& t : j.at("raw"))
        n.stream.push_back({t[0].get<std::string>(), t[1].is_null() ? std::nullopt : std::optional<double>(t[1].get<double>())});
      n.finish = j.value("finish", std::string("terminal")) == "tool_call" ? FinishReason::ToolCall : FinishReason::Terminal;
    } else {
      n.stream.push_back(marker(markers::kThinkOpen));
      if (j.contains("think"))
        for (auto& t : scripted_detail::parse_token_segments(j.at("think"), default_logprob_)) n.stream.push_back(std::move(t));
      n.stream.push_back(marker(markers::kThinkClose));
      if (j.contains("call")) {
        const json& c = j.at("call");
        std::string name = c.at("name").get<std::string>();
        json args = c.value("arguments", json::object());
        std::string payload = "{\"name\":" + json(name).dump() + ",\"arguments\":" + args.dump() + "}";
        std::vector<std::string> pieces;
        std::vector<double> lps;
        if (c.contains("logprobs")) {
          lps = c.at("logprobs").get<std::vector<double>>();
          pieces = scripted_detail::chunk(payload, lps.size());
        } else {
          std::size_t k = c.value("tokens", std::max<std::size_t>(1, payload.size() / 4));
          pieces = scripted_detail::chunk(payload, k);
          lps.assign(k, c.value("logprob", default_logprob_));
        }
        if (!wire_structured_) n.stream.push_back(marker(markers::kCallOpen));
        for (std::size_t i = 0; i < pieces.size(); ++i) n.stream.push_back({pieces[i], lps[i]});
        if (!wire_structured_) n.stream.push_back(marker(markers::kCallClose));
        else n.structured.push_back({name, args.dump()});
        n.finish = FinishReason::ToolCall;
      } else if (j.contains("answer")) {
        n.stream.push_back(marker(markers::kAnswerOpen));
        auto words = scripted_detail::split_words_spaced(j.at("answer").get<std::string>());
        for (auto& w : words) n.stream.push_back({std::move(w), j.value("answer_logprob", -0.01)});
        n.stream.push_back(marker(markers::kAnswerClose));
      }
    }
    if (j.contains("next")) n.next = node_ref(j.at("next"));

    try {
      SegmentedTurn seg = n.structured.empty() ? segment_step(n.stream, 0) : segment_structured(n.stream, n.structured.front(), 0);
      n.rendered = text::collapse_whitespace(render_assistant_turn(seg.step));
    } catch (const Error&) {
      // Deliberately malformed turns cannot appear in history.
    }
    nodes_[idx] = std::move(n);
  }

  std::size_t pick(std::size_t idx, std::int64_t seed) const {
    while (!nodes_[idx].variants.empty()) {
      const auto& v = nodes_[idx].variants;
      auto n = static_cast<std::int64_t>(v.size());
      idx = v[static_cast<std::size_t>(((seed % n) + n) % n)];
    }
    return idx;
  }

  std::optional<std::size_t> match(std::size_t idx, const std::string& turn) const {
    const Node& n = nodes_[idx];
    if (!n.variants.empty()) {
      for (auto v : n.variants)
        if (auto m = match(v, turn)) return m;
      return std::nullopt;
    }
    if (n.rendered && *n.rendered == turn) return idx;
    return std::nullopt;
  }

  ModelResponse respond_rollout(const ModelRequest& req) const {
    const Message* user = nullptr;
    for (const auto& m : req.messages)
      if (m.role == Role::User) {
        user = &m;
        break;
      }
    if (!user) fail(ErrorCode::ScriptMiss, "rollout request has no user turn");
    auto root = roots_.find(text::collapse_whitespace(user->content));
    if (root == roots_.end()) fail(ErrorCode::ScriptMiss, "no script for question '" + user->content + "'");

    std::optional<std::size_t> cur = root->second;
    std::size_t depth = 0;
    for (const auto& m : req.messages) {
      if (m.role != Role::Assistant) continue;
      if (!cur) fail(ErrorCode::ScriptMiss, "conversation continues past the end of the script");
      auto hit = match(*cur, text::collapse_whitespace(m.content));
      if (!hit) fail(ErrorCode::ScriptMiss, "assistant turn " + std::to_string(depth) + " is off-script");
      cur = nodes_[*hit].next;
      ++depth;
    }
    if (!cur) fail(ErrorCode::ScriptMiss, "script ended before this turn");

    const Node& leaf = nodes_[pick(*cur, req.seed)];
    ModelResponse r;
    r.structured_tool_calls = leaf.structured;
    r.finish_reason = leaf.finish;
    std::uint64_t kept = 0;
    for (const auto& t : leaf.stream) {
      bool is_marker = markers::is_marker(t.text);
      if (!is_marker && kept == req.max_tokens) {
        r.finish_reason = FinishReason::Length;
        r.structured_tool_calls.clear();
        break;
      }
      r.assistant_tokens.push_back(t);
      kept += !is_marker;
    }
    return r;
  }

  static std::size_t assistant_turns(const ModelRequest& req) {
    std::size_t n = 0;
    for (const auto& m : req.messages) n += m.role == Role::Assistant;
    return n;
  }

  static std::string all_user_text(const ModelRequest& req) {
    std::string s;
    for (const auto& m : req.messages)
      if (m.role == Role::User) s += m.content + "\n";
    return s;
  }

  static std::string first_words(std::string_view s, std::size_t n) {
    auto words = text::split_whitespace(s);
    if (words.size() > n) words.resize(n);
    std::string out;
    for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
    return out;
  }

  std::string respond_compress(const ModelRequest& req) const {
    if (auto it = compress_.find(req.subject); it != compress_.end())
      return it->second[std::min(assistant_turns(req), it->second.size() - 1)];

    auto parsed = parse_transcript(all_user_text(req));
    if (!parsed) fail(ErrorCode::ScriptMiss, "compression prompt carries no trajectory");
    json methods = json::array();
    std::string plan;
    for (const auto& s : parsed->steps) {
      if (!s.tool_name) continue;
      std::string sub = first_words(s.think, 12);
      methods.push_back({{"subproblem", sub},
                         {"tool", *s.tool_name},
                         {"parameters", s.arguments},
                         {"subanswer", first_words(s.response, 16)}});
      plan += (plan.empty() ? "" : "; ") + std::to_string(methods.size()) + ") " + sub;
    }
    std::string answer = parsed->final_answer.value_or("");
    std::string last_think = parsed->steps.empty() ? "" : parsed->steps.back().think;
    json report{{"solution_planning", "Solve " + std::to_string(methods.size()) + " subproblems in order: " + plan},
                {"solution_methods", methods},
                {"final_reasoning", first_words(last_think, 40) + " Therefore the answer is " + answer + "."},
                {"candidate_answer", answer}};
    return report.dump();
  }

  std::string respond_aggregate(const ModelRequest& req) const {
    if (auto it = aggregate_.find(text::collapse_whitespace(req.subject)); it != aggregate_.end())
      return it->second.is_string() ? it->second.get<std::string>() : it->second.dump();

    std::string prompt = all_user_text(req);
    auto b = prompt.find("<reports>");
    auto e = prompt.find("</reports>");
    if (b == std::string::npos || e == std::string::npos) fail(ErrorCode::ScriptMiss, "aggregation prompt carries no reports");
    json reports = json::parse(prompt.substr(b + 9, e - b - 9), nullptr, false);
    if (reports.is_discarded() || !reports.is_array() || reports.empty())
      fail(ErrorCode::ScriptMiss, "aggregation prompt reports are unreadable");
    const json* best = &reports[0];
    for (const auto& r : reports)
      if (r.value("solution_methods", json::array()).size() > best->value("solution_methods", json::array()).size()) best = &r;
    return json{{"answer", best->value("candidate_answer", std::string())},
                {"justification", "Report " + best->value("report_id", std::string()) +
                                      " gives the most complete evidence chain."}}
        .dump();
  }

  std::string respond_extract(const ModelRequest& req) const {
    if (auto it = extract_.find(req.subject); it != extract_.end())
      return it->second[std::min(assistant_turns(req), it->second.size() - 1)];

    std::string prompt = all_user_text(req);
    auto parsed = parse_transcript(prompt);
    if (!parsed) fail(ErrorCode::ScriptMiss, "extraction prompt carries no trajectory");
    std::string reference;
    std::size_t pos = 0;
    if (auto r = detail::between(prompt, "<reference_answer>", "</reference_answer>", pos, prompt.size())) reference = *r;
    std::string ref_key = text::canonical_answer(reference);

    json vertices = json::array();
    json effective = json::array();
    json relations = json::array();
    std::map<std::string, bool> seen;
    std::string prev;
    for (const auto& s : parsed->steps) {
      if (!s.tool_name) continue;
      std::vector<std::string> names;
      for (const char* key : {"query", "url"})
        if (auto a = s.arguments.find(key); a != s.arguments.end())
          for (const auto& v : a->is_array() ? *a : json::array({*a}))
            if (v.is_string()) names.push_back(text::canonical_answer(v.get<std::string>()));
      bool useful = !ref_key.empty() && text::canonical_answer(s.response).find(ref_key) != std::string::npos;
      for (const auto& n : names) {
        if (n.empty() || seen.count(n)) continue;
        seen[n] = true;
        vertices.push_back(n);
        effective.push_back(useful);
        if (!prev.empty()) relations.push_back({{"source", prev}, {"target", n}, {"label", "followed_by"}});
        prev = n;
      }
    }
    if (!ref_key.empty() && !seen.count(ref_key)) {
      vertices.push_back(ref_key);
      effective.push_back(true);
      if (!prev.empty()) relations.push_back({{"source", prev}, {"target", ref_key}, {"label", "yields"}});
    }
    return json{{"vertices", vertices}, {"relations", relations}, {"effective_flags", effective}}.dump();
  }

  std::string respond_judge(const ModelRequest& req) const {
    json s = json::parse(req.subject, nullptr, false);
    if (s.is_discarded() || !s.is_object()) fail(ErrorCode::ScriptMiss, "judge request lacks a gold/prediction subject");
    bool same = text::canonical_answer(s.value("gold", std::string())) ==
                text::canonical_answer(s.value("prediction", std::string()));
    return same ? "yes" : "no";
  }

  std::string id_;
  bool wire_structured_ = false;
  double default_logprob_ = -0.1;
  TokenCosts costs_;
  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> names_;
  std::map<std::string, std::size_t> roots_;
  std::vector<json> tasks_;
  std::map<std::string, std::vector<SearchHit>> search_;
  std::map<std::string, std::map<std::string, std::string>> visit_;
  std::map<std::string, std::vector<std::string>> compress_;
  std::map<std::string, std::vector<std::string>> extract_;
  std::map<std::string, json> aggregate_;
};

/// Whitespace-insensitive hash of a conversation.
inline std::uint64_t conversation_hash(const ModelRequest& req) {
  std::uint64_t h = text::fnv1a("pmuse-conversation");
  for (const auto& m : req.messages) {
    h = text::fnv1a(to_string(m.role), h);
    h = text::fnv1a("\x1f", h);
    h = text::fnv1a(text::collapse_whitespace(m.content), h);
    h = text::fnv1a("\x1e", h);
  }
  return h;
}

class ScriptedModel : public ModelBackend {
 public:
  explicit ScriptedModel(std::shared_ptr<const ScriptedScenario> scenario) : scenario_(std::move(scenario)) {}

  ModelResponse chat_generate(const ModelRequest& request) override {
    ++calls_;
    auto key = std::make_tuple(conversation_hash(request), request.seed, static_cast<int>(request.purpose),
                               request.subject, request.max_tokens);
    {
      std::lock_guard lock(mu_);
      captured_.push_back(request);
      if (auto it = table_.find(key); it != table_.end()) return it->second;
    }
    ModelResponse resp = scenario_->respond(request);
    std::lock_guard lock(mu_);
    table_.emplace(key, resp);
    return resp;
  }

  std::optional<TokenCosts> costs() const override { return scenario_->costs(); }

  std::size_t calls() const { return calls_.load(); }

  std::vector<ModelRequest> captured(std::optional<Purpose> purpose = std::nullopt) const {
    std::lock_guard lock(mu_);
    std::vector<ModelRequest> out;
    for (const auto& r : captured_)
      if (!purpose || r.purpose == *purpose) out.push_back(r);
    return out;
  }

  const ScriptedScenario& scenario() const { return *scenario_; }

 private:
  std::shared_ptr<const ScriptedScenario> scenario_;
  std::atomic<std::size_t> calls_{0};
  mutable std::mutex mu_;
  std::vector<ModelRequest> captured_;
  std::map<std::tuple<std::uint64_t, std::int64_t, int, std::string, std::uint64_t>, ModelResponse> table_;
};

class ScriptedSearch : public SearchBackend {
 public:
  explicit ScriptedSearch(std::shared_ptr<const ScriptedScenario> scenario, std::size_t batch_cap = 5)
      : SearchBackend(batch_cap), scenario_(std::move(scenario)) {}

  std::size_t calls() const { return calls_.load(); }

 protected:
  std::vector<std::vector<SearchHit>> do_search(std::span<const std::string> queries) override {
    ++calls_;
    std::vector<std::vector<SearchHit>> out;
    for (const auto& q : queries) out.push_back(scenario_->search_hits(q));
    return out;
  }

 private:
  std::shared_ptr<const ScriptedScenario> scenario_;
  std::atomic<std::size_t> calls_{0};
};

class ScriptedVisit : public VisitBackend {
 public:
  explicit ScriptedVisit(std::shared_ptr<const ScriptedScenario> scenario, std::size_t batch_cap = 5)
      : VisitBackend(batch_cap), scenario_(std::move(scenario)) {}

  std::size_t calls() const { return calls_.load(); }

 protected:
  std::vector<VisitResult> do_visit(std::span<const std::string> urls, const std::string& goal) override {
    ++calls_;
    std::vector<VisitResult> out;
    for (const auto& u : urls) out.push_back(scenario_->visit_page(u, goal));
    return out;
  }

 private:
  std::shared_ptr<const ScriptedScenario> scenario_;
  std::atomic<std::size_t> calls_{0};
};

}  // namespace pmuse
