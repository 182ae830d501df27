// Prompt and verdict fixtures shared by the unit tests and the acceptance gate.
#pragma once

#include <string>
#include <vector>

#include "evoforge/prompts.hpp"

namespace evoforge::fixtures {

inline Problem fixture_problem(int i) {
  static const std::vector<Problem> problems = {
      {"p-001", "2+2?", {}, "4", json::object()},
      {"p-002", "In the figure, angle ABC is 40 degrees and AB = AC. Find angle BAC.", {"figs/triangle.png"}, "100", json::object()},
      {"p-003", "Solve for x: 3x - 7 = 11.", {}, "6", json::object()},
      {"p-004", "The function graph shown passes through (0, 1) and (2, 9). If f(x) = a*b^x, find b.",
       {"figs/graph.png", "https://example.org/axis.png"}, "3", json::object()},
      {"p-005", "A cylinder has radius 2 and height 5. What is its volume? Use {pi} symbolically.", {"sha256:" + std::string(64, 'a')},
       "20π", json::object()},
  };
  return problems.at(static_cast<std::size_t>(i));
}

inline ReasoningPath wrong_path(const Problem& p, const std::string& text) {
  ReasoningPath r;
  r.problem_id = p.id;
  r.raw_text = text;
  r.steps = split_steps(text);
  auto a = extract_final_answer(text);
  r.has_answer = a.has_value();
  r.final_answer = a.value_or("");
  return r;
}

inline OrmVerdict wrong_verdict(const std::string& id, std::string step, std::string analysis) {
  OrmVerdict v;
  v.problem_id = id;
  v.status = Status::wrong;
  v.error_step = std::move(step);
  v.error_analysis = std::move(analysis);
  v.improvement_suggestion = "Recheck the step.";
  return v;
}

/// Golden file form: prompt text followed by one "[image] ref" line per image.
inline std::string render_for_golden(const PromptMessage& msg) {
  std::string rendered = msg.text();
  for (const auto& img : msg.images()) rendered += "[image] " + img + "\n";
  return rendered;
}

struct VerdictCase {
  const char* name;
  std::string input;
  bool accept;
  std::string reason_or_status;       // failure_reason when rejected, status when accepted
  std::vector<std::string> diagnostics;  // expected (accepted cases)
};

inline std::vector<VerdictCase> adversarial_corpus() {
  const std::string wrong = R"({"status": "WRONG", "error_step": "Step 2", "error_analysis": "Sign error when expanding.", "improvement_suggestion": "Expand carefully."})";
  return {
      {"plain-wrong", wrong, true, "WRONG", {}},
      {"fenced-json", "```json\n" + wrong + "\n```", true, "WRONG", {"fence-stripped"}},
      {"fenced-bare", "```\n" + wrong + "\n```", true, "WRONG", {"fence-stripped"}},
      {"prose-around", "Here is my evaluation:\n" + wrong + "\nHope this helps.", true, "WRONG", {"surrounding-text-trimmed"}},
      {"fence-with-prose", "Verdict below.\n```json\n" + wrong + "\n```\nDone.", true, "WRONG",
       {"fence-stripped", "surrounding-text-trimmed"}},
      {"status-incorrect", R"({"status": "INCORRECT", "error_step": "Step 1", "error_analysis": "x"})", false, "status-enum", {}},
      {"status-lowercase", R"({"status": "wrong", "error_step": "Step 1", "error_analysis": "x"})", false, "status-enum", {}},
      {"status-null", R"({"status": null, "error_step": "Step 1", "error_analysis": "x"})", false, "status-enum", {}},
      {"missing-status", R"({"error_step": "Step 1", "error_analysis": "x"})", false, "missing-status", {}},
      {"wrong-empty-step", R"({"status": "WRONG", "error_step": "", "error_analysis": "x"})", false, "wrong-missing-error-fields", {}},
      {"wrong-blank-analysis", R"({"status": "WRONG", "error_step": "Step 1", "error_analysis": "   "})", false,
       "wrong-missing-error-fields", {}},
      {"correct-with-errors", R"({"status": "CORRECT", "error_step": "Step 1", "error_analysis": "none", "improvement_suggestion": "Be brief."})",
       true, "CORRECT", {"correct-error-fields-cleared"}},
      {"two-objects", wrong + "\n" + wrong, false, "multiple-objects", {}},
      {"duplicate-status", R"({"status": "CORRECT", "status": "WRONG", "error_step": "Step 1", "error_analysis": "x"})", false,
       "duplicate-key", {}},
      {"unicode-quotes", "{“status”: “WRONG”, “error_step”: “Step 4”, “error_analysis”: “Dropped a factor.”}", true, "WRONG",
       {"unicode-quotes-normalized"}},
      {"no-json", "The solution is WRONG at step 2.", false, "no-json-object", {}},
      {"truncated", R"({"status": "WRONG", "error_step": "Step 2", "error_an)", false, "no-json-object", {}},
      {"trailing-comma", R"({"status": "CORRECT", "error_step": "", "error_analysis": "",})", false, "malformed-json", {}},
      {"braces-in-strings-and-prose", R"(For the set {1, 2} the check gives: {"status": "WRONG", "error_step": "Step {2}", "error_analysis": "Used {a} for {b}."})",
       true, "WRONG", {"surrounding-text-trimmed"}},
      {"numeric-step", R"({"status": "WRONG", "error_step": 3, "error_analysis": "x"})", false, "field-type", {}},
      {"extra-keys", R"({"status": "CORRECT", "error_step": "", "error_analysis": "", "improvement_suggestion": "ok", "confidence": 0.9})",
       true, "CORRECT", {"extra-keys-ignored"}},
  };
}

}  // namespace evoforge::fixtures
