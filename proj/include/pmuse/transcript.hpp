#pragma once

// Tagged plain-text rendering of a trajectory, as shown to the compression
// and extraction prompts, and its inverse.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pmuse/model.hpp"

namespace pmuse {

inline std::string render_transcript(const Trajectory& traj, std::string_view question) {
  std::string out = "<trajectory id=\"" + traj.id + "\">\n";
  out += "<question>" + std::string(question) + "</question>\n";
  for (const auto& s : traj.steps) {
    out += "<step index=\"" + std::to_string(s.index) + "\">\n";
    out += "<think>" + reasoning_text(s) + "</think>\n";
    if (s.tool_call) {
      json call{{"name", s.tool_call->tool_name}, {"arguments", s.tool_call->arguments}};
      out += "<tool_call>" + call.dump() + "</tool_call>\n";
    }
    if (s.tool_response) out += "<tool_response>" + s.tool_response->content + "</tool_response>\n";
    out += "</step>\n";
  }
  if (traj.final_answer) out += "<final_answer>" + *traj.final_answer + "</final_answer>\n";
  out += "</trajectory>";
  return out;
}

struct TranscriptStep {
  std::string think;
  std::optional<std::string> tool_name;
  json arguments = json::object();
  std::string response;
};

struct ParsedTranscript {
  std::string id;
  std::string question;
  std::vector<TranscriptStep> steps;
  std::optional<std::string> final_answer;
};

namespace detail {

inline std::optional<std::string> between(std::string_view s, std::string_view open, std::string_view close,
                                          std::size_t& pos, std::size_t limit) {
  auto b = s.find(open, pos);
  if (b == std::string_view::npos || b >= limit) return std::nullopt;
  b += open.size();
  auto e = s.find(close, b);
  if (e == std::string_view::npos) return std::nullopt;
  pos = e + close.size();
  return std::string(s.substr(b, e - b));
}

}  // namespace detail

/// Parses the first trajectory block found in `s`; nullopt if there is none.
inline std::optional<ParsedTranscript> parse_transcript(std::string_view s) {
  auto start = s.find("<trajectory id=\"");
  if (start == std::string_view::npos) return std::nullopt;
  auto id_begin = start + 16;
  auto id_end = s.find('"', id_begin);
  auto stop = s.find("</trajectory>", start);
  if (id_end == std::string_view::npos || stop == std::string_view::npos) return std::nullopt;

  ParsedTranscript out;
  out.id = std::string(s.substr(id_begin, id_end - id_begin));
  std::size_t pos = id_end;
  if (auto q = detail::between(s, "<question>", "</question>", pos, stop)) out.question = *q;

  while (true) {
    auto step_at = s.find("<step index=", pos);
    if (step_at == std::string_view::npos || step_at >= stop) break;
    auto step_end = s.find("</step>", step_at);
    if (step_end == std::string_view::npos) break;
    TranscriptStep step;
    std::size_t p = step_at;
    if (auto t = detail::between(s, "<think>", "</think>", p, step_end)) step.think = *t;
    std::size_t q = p;
    if (auto c = detail::between(s, "<tool_call>", "</tool_call>", q, step_end)) {
      json call = json::parse(*c, nullptr, false);
      if (!call.is_discarded() && call.is_object()) {
        step.tool_name = call.value("name", std::string());
        step.arguments = call.value("arguments", json::object());
      }
      p = q;
    }
    if (auto r = detail::between(s, "<tool_response>", "</tool_response>", p, step_end)) step.response = *r;
    out.steps.push_back(std::move(step));
    pos = step_end + 7;
  }
  std::size_t p = pos;
  if (auto a = detail::between(s, "<final_answer>", "</final_answer>", p, stop)) out.final_answer = *a;
  return out;
}

}  // namespace pmuse
