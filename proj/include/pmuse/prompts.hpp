#pragma once

// Prompt templates for compression, aggregation, entity extraction and page
// extraction. Placeholders are `{name}`; any template can be replaced from a
// file at load time.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "pmuse/error.hpp"

namespace pmuse {

struct PromptSet {
  std::string version = "v1";

  // {trajectory_id} {question} {transcript}
  std::string compress =
      "Compress the agent trajectory below into a structured report that keeps everything needed to "
      "derive its final answer and drops everything else (redundant tool responses, dead-end searches, "
      "ineffective reasoning).\n\n"
      "Return one JSON object with exactly these fields:\n"
      "  \"solution_planning\": how the question was decomposed into subproblems, their dependencies "
      "and the order they were solved in;\n"
      "  \"solution_methods\": a list of {\"subproblem\", \"tool\", \"parameters\", \"subanswer\"} "
      "records, one per subproblem that contributed directly or indirectly to the answer;\n"
      "  \"final_reasoning\": how the subanswers combine into the final answer;\n"
      "  \"candidate_answer\": the trajectory's final answer, copied verbatim.\n"
      "Quote tool output only as short snippets.\n\n"
      "Question: {question}\n\n{transcript}\n";

  // {error}
  std::string compress_repair =
      "Your previous output was rejected: {error}\n"
      "Return only the corrected JSON object with the four required fields.";

  // {question} {report_count} {reports}
  std::string aggregate =
      "You are given {report_count} independent solution reports for the same question. Each report "
      "lists how the question was decomposed, which tools were used with which parameters, the "
      "subanswers found, and the final reasoning.\n\n"
      "Decide the single best-supported answer by judging the coherence and evidential support of "
      "each reasoning chain.\n"
      "Rules:\n"
      "1. Do not treat how many reports share an answer as evidence that it is correct.\n"
      "2. Output exactly one answer. Never list, concatenate or hedge between alternatives.\n"
      "3. You have no tools. Reason only over the reports.\n\n"
      "Question: {question}\n\n<reports>{reports}</reports>\n\n"
      "Return one JSON object: {\"answer\": \"...\", \"justification\": \"...\"}.";

  // {error}
  std::string aggregate_repair =
      "Your previous output was rejected: {error}\n"
      "Return only the JSON object {\"answer\": ..., \"justification\": ...} with one single answer.";

  // {question} {transcript} {reference_answer}
  std::string extract =
      "List every entity the agent encountered in the trajectory below and the relations it "
      "established between them. Mark an entity effective if it contributed directly or indirectly "
      "to deriving the reference answer.\n\n"
      "Return one JSON object: {\"vertices\": [names], \"relations\": [{\"source\", \"target\", "
      "\"label\"}], \"effective_flags\": [booleans aligned with vertices]}. Relation endpoints must be "
      "listed vertices.\n\n"
      "Question: {question}\n<reference_answer>{reference_answer}</reference_answer>\n\n{transcript}\n";

  // {error}
  std::string extract_repair =
      "Your previous output was rejected: {error}\nReturn only the corrected JSON object.";

  // {url} {goal} {page}
  std::string visit_extract =
      "Extract from the webpage below the information relevant to the goal. Be concise and factual; "
      "say so if the page has nothing relevant.\n\nGoal: {goal}\nURL: {url}\n\n<page>{page}</page>";

  /// Replaces any template whose file exists in `dir` (`<name>.txt`).
  void override_from(const std::filesystem::path& dir) {
    auto take = [&](const char* name, std::string& slot) {
      auto path = dir / (std::string(name) + ".txt");
      if (!std::filesystem::exists(path)) return;
      std::ifstream in(path);
      if (!in) fail(ErrorCode::ConfigError, "cannot read prompt template " + path.string());
      std::ostringstream ss;
      ss << in.rdbuf();
      slot = ss.str();
    };
    take("compress", compress);
    take("compress_repair", compress_repair);
    take("aggregate", aggregate);
    take("aggregate_repair", aggregate_repair);
    take("extract", extract);
    take("extract_repair", extract_repair);
    take("visit_extract", visit_extract);
    if (std::filesystem::exists(dir / "VERSION")) {
      std::ifstream in(dir / "VERSION");
      std::getline(in, version);
    }
  }
};

}  // namespace pmuse
