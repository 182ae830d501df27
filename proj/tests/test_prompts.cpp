#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "evoforge/error.hpp"
#include "evoforge/prompts.hpp"
#include "support/prompt_fixtures.hpp"

using namespace evoforge;
using namespace evoforge::fixtures;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Golden comparison; EVOFORGE_UPDATE_GOLDEN=1 rewrites the file instead.
void expect_golden(const std::string& name, const PromptMessage& msg) {
  const std::string rendered = render_for_golden(msg);
  const auto path = std::filesystem::path(EVOFORGE_GOLDEN_DIR) / name;
  if (const char* update = std::getenv("EVOFORGE_UPDATE_GOLDEN"); update && std::string(update) == "1") {
    std::ofstream(path, std::ios::binary) << rendered;
    GTEST_SKIP() << "golden rewritten: " << path;
  }
  ASSERT_TRUE(std::filesystem::exists(path)) << path;
  EXPECT_EQ(rendered, read_file(path)) << name;
}

}  // namespace

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

TEST(Prompts, SolvePromptCarriesInstructionAndQuestion) {
  const auto msg = build_solve_prompt(fixture_problem(0));
  const auto text = msg.text();
  EXPECT_NE(text.find("You are an excellent mathematics teacher."), std::string::npos);
  EXPECT_NE(text.find("\"The answer to this problem is\" followed by the final result."), std::string::npos);
  EXPECT_NE(text.find("2+2?"), std::string::npos);
  EXPECT_TRUE(msg.images().empty());
  EXPECT_EQ(msg.parts.size(), 1u);
}

TEST(Prompts, ImagesAttachedInOrder) {
  const auto p = fixture_problem(3);
  const auto msg = build_solve_prompt(p);
  EXPECT_EQ(msg.images(), p.images);
  EXPECT_EQ(msg.parts.front().kind, ContentPart::Kind::text);
}

TEST(Prompts, JudgePromptKeepsJsonKeysVerbatim) {
  const auto p = fixture_problem(0);
  const auto msg = build_judge_prompt(p, wrong_path(p, "2+2=5. The answer to this problem is 5."));
  const auto text = msg.text();
  for (const char* key : {"\"status\": \"CORRECT\" or \"WRONG\"", "\"error_step\"", "\"error_analysis\"",
                          "\"improvement_suggestion\""}) {
    EXPECT_NE(text.find(key), std::string::npos) << key;
  }
  EXPECT_NE(text.find("different format but identical essence"), std::string::npos);
  EXPECT_NE(text.find("Predicted answer: 2+2=5. The answer to this problem is 5."), std::string::npos);
  EXPECT_NE(text.find("Standard answer: 4\n"), std::string::npos);
}

TEST(Prompts, JudgePromptRejectsMismatchedOrEmptyPrediction) {
  const auto p = fixture_problem(0);
  auto path = wrong_path(p, "x");
  path.problem_id = "other";
  EXPECT_THROW(build_judge_prompt(p, path), Error);
  EXPECT_THROW(build_judge_prompt(p, wrong_path(p, "   ")), Error);
}

TEST(Prompts, ReflectionPromptSubstitutesFeedback) {
  const auto p = fixture_problem(2);
  const auto path = wrong_path(p, "Step 1: 3x = 4.\nStep 2: x = 4/3.\nThe answer to this problem is 4/3.");
  const auto msg = build_reflection_prompt(p, path, wrong_verdict(p.id, "Step 3", "Moved -7 with the wrong sign."));
  const auto text = msg.text();
  EXPECT_NE(text.find("Error step (wrong_step): Step 3\n"), std::string::npos);
  EXPECT_NE(text.find("Error analysis (wrong_analysis): Moved -7 with the wrong sign.\n"), std::string::npos);
  EXPECT_NE(text.find("the authenticity of wrong_step and wrong_analysis may be questionable"), std::string::npos);
  EXPECT_NE(text.find("Please reflect and correct your solution."), std::string::npos);
  EXPECT_NE(text.find("\"The answer to this problem is\""), std::string::npos);
}

TEST(Prompts, ReflectionPromptRejectsCorrectVerdict) {
  const auto p = fixture_problem(0);
  OrmVerdict v;
  v.problem_id = p.id;
  v.status = Status::correct;
  EXPECT_THROW(build_reflection_prompt(p, wrong_path(p, "The answer to this problem is 4."), v), Error);
}

TEST(Prompts, TemplateFidelityWithEmptySlots) {
  auto strip_slots = [](std::string_view tpl, std::initializer_list<const char*> names) {
    std::string s(tpl);
    for (const char* n : names) {
      const std::string marker = std::string("{") + n + "}";
      for (auto pos = s.find(marker); pos != std::string::npos; pos = s.find(marker)) s.erase(pos, marker.size());
    }
    return s;
  };
  EXPECT_EQ(render_template(templates::solve, {{"question", ""}}), strip_slots(templates::solve, {"question"}));
  EXPECT_EQ(render_template(templates::judge, {{"question", ""}, {"predict", ""}, {"ground_answer", ""}}),
            strip_slots(templates::judge, {"question", "predict", "ground_answer"}));
  EXPECT_EQ(render_template(templates::reflect,
                            {{"question", ""}, {"wrong_answer", ""}, {"wrong_step", ""}, {"wrong_analysis", ""}}),
            strip_slots(templates::reflect, {"question", "wrong_answer", "wrong_step", "wrong_analysis"}));
}

TEST(Prompts, SubstitutionIsSinglePass) {
  EXPECT_EQ(render_template("A {question} B", {{"question", "{question}"}}), "A {question} B");
  EXPECT_EQ(render_template("{ \"k\": 1 } {x}", {{"question", "q"}}), "{ \"k\": 1 } {x}");
}

TEST(PromptsGolden, SolveFixtures) {
  for (int i = 0; i < 5; ++i) expect_golden("solve_" + std::to_string(i + 1) + ".txt", build_solve_prompt(fixture_problem(i)));
}

TEST(PromptsGolden, JudgeFixtures) {
  const auto p1 = fixture_problem(0);
  expect_golden("judge_1.txt", build_judge_prompt(p1, wrong_path(p1, "Step 1: 2+2 = 4.\nThe answer to this problem is 4.")));
  const auto p2 = fixture_problem(1);
  expect_golden("judge_2.txt",
                build_judge_prompt(p2, wrong_path(p2, "1. Base angles are 40 degrees each.\n2. 180 - 80 = 100.\n"
                                                      "The answer to this problem is 100 degrees.")));
  const auto p3 = fixture_problem(4);
  expect_golden("judge_3.txt", build_judge_prompt(p3, wrong_path(p3, "V = pi r^2 h = pi * 4 * 5.\nThe answer to this problem is 10π.")));
}

TEST(PromptsGolden, ReflectionFixtures) {
  const auto p1 = fixture_problem(2);
  expect_golden("reflect_1.txt",
                build_reflection_prompt(p1, wrong_path(p1, "Step 1: 3x = 4.\nStep 2: x = 4/3.\nThe answer to this problem is 4/3."),
                                        wrong_verdict(p1.id, "Step 1", "Moving -7 across the equals sign must add 7, not subtract it.")));
  const auto p2 = fixture_problem(1);
  expect_golden("reflect_2.txt",
                build_reflection_prompt(p2, wrong_path(p2, "Step 1: angle BAC = 40.\nThe answer to this problem is 40."),
                                        wrong_verdict(p2.id, "Step 1", "Misread the diagram: 40 degrees marks a base angle.")));
  const auto p3 = fixture_problem(3);
  expect_golden("reflect_3.txt",
                build_reflection_prompt(p3, wrong_path(p3, "a = 1, so 9 = 2b and b = 4.5.\nThe answer to this problem is 4.5."),
                                        wrong_verdict(p3.id, "Step 3", "Treated b^x as a product instead of an exponent.")));
}

// ---------------------------------------------------------------------------
// Final-answer extraction
// ---------------------------------------------------------------------------

TEST(ExtractFinalAnswer, BasicCases) {
  EXPECT_EQ(extract_final_answer("Work... The answer to this problem is 42."), "42");
  EXPECT_EQ(extract_final_answer("The answer to this problem is: x = 3!\n"), "x = 3");
  EXPECT_EQ(extract_final_answer("The answer to this problem is 3.5."), "3.5");
  EXPECT_EQ(extract_final_answer("no marker here"), std::nullopt);
  EXPECT_EQ(extract_final_answer("The answer to this problem is ."), std::string{});
  EXPECT_EQ(extract_final_answer("the answer to this problem is 7"), std::nullopt);  // case-sensitive
}

TEST(ExtractFinalAnswer, FallbackMarkersOnlyWhenConfigured) {
  const std::vector<std::string> fallbacks = {"Final answer:"};
  EXPECT_EQ(extract_final_answer("Final answer: 9", {}), std::nullopt);
  EXPECT_EQ(extract_final_answer("Final answer: 9", fallbacks), "9");
  EXPECT_EQ(extract_final_answer("The answer to this problem is 1. Final answer: 9", fallbacks), "1. Final answer: 9");
}

// Oracle: enumerate every marker start position by brute force and take the last.
TEST(ExtractFinalAnswer, LastMarkerMatchesBruteForce) {
  std::mt19937 rng(11);
  const std::string marker(kAnswerMarker);
  const std::vector<std::string> pieces = {"Step 1. ", "x", " 12", "\n", marker + " ", "a.", "7", "!", " ", "y+1"};
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    const int n = 1 + static_cast<int>(rng() % 8);
    for (int i = 0; i < n; ++i) text += pieces[rng() % pieces.size()];
    std::optional<std::size_t> last;
    for (std::size_t i = 0; i + marker.size() <= text.size(); ++i)
      if (text.compare(i, marker.size(), marker) == 0) last = i;
    const auto got = extract_final_answer(text);
    if (!last) {
      EXPECT_FALSE(got.has_value()) << text;
      continue;
    }
    std::string rest = text.substr(*last + marker.size());
    rest = rest.substr(0, rest.find('\n'));
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
    while (!rest.empty() && is_space(rest.front())) rest.erase(rest.begin());
    if (!rest.empty() && rest.front() == ':') rest.erase(rest.begin());
    while (!rest.empty() && (is_space(rest.front()))) rest.erase(rest.begin());
    while (!rest.empty() && (is_space(rest.back()) || std::string(".,;:!?").find(rest.back()) != std::string::npos))
      rest.pop_back();
    ASSERT_TRUE(got.has_value()) << text;
    EXPECT_EQ(*got, rest) << text;
  }
}

TEST(ExtractFinalAnswer, IdempotentSuffixProperty) {
  std::mt19937 rng(5);
  const std::string alphabet = "abcxyz0123456789 .,\n+-=()";
  const std::string answer_alphabet = "ABCxyz0123456789+-";
  for (int trial = 0; trial < 500; ++trial) {
    std::string prefix, answer;
    for (int i = 0, n = static_cast<int>(rng() % 60); i < n; ++i) prefix += alphabet[rng() % alphabet.size()];
    for (int i = 0, n = 1 + static_cast<int>(rng() % 10); i < n; ++i) answer += answer_alphabet[rng() % answer_alphabet.size()];
    EXPECT_EQ(extract_final_answer(prefix + " The answer to this problem is " + answer + "."), answer);
  }
}

TEST(CanonicalizeAnswer, StripsWrappers) {
  EXPECT_EQ(canonicalize_answer(" $\\boxed{ 20 \\pi }$ ."), "20\\pi");
  EXPECT_EQ(canonicalize_answer("X = 3"), "x=3");
}

TEST(SplitSteps, EnumeratorsAndBlankLines) {
  const auto steps = split_steps("Step 1: a\ncontinued\nStep 2: b\n\nfree text\n3. c\n- d");
  ASSERT_EQ(steps.size(), 5u);
  EXPECT_EQ(steps[0], "Step 1: a\ncontinued");
  EXPECT_EQ(steps[2], "free text");
  EXPECT_EQ(steps[4], "- d");
  EXPECT_TRUE(split_steps("  \n ").empty());
}

// ---------------------------------------------------------------------------
// Verdict parsing
// ---------------------------------------------------------------------------

TEST(ParseVerdict, AdversarialCorpusMatchesAdjudication) {
  const auto corpus = adversarial_corpus();
  ASSERT_GE(corpus.size(), 20u);
  for (const auto& c : corpus) {
    const auto r = parse_verdict(c.input, {"p", "judge", 1});
    EXPECT_EQ(r.ok(), c.accept) << c.name << " reason=" << r.failure_reason;
    if (c.accept && r.ok()) {
      EXPECT_EQ(to_string(r.verdict->status), c.reason_or_status) << c.name;
      EXPECT_EQ(r.diagnostics, c.diagnostics) << c.name;
      EXPECT_TRUE(verdict_violation(*r.verdict).empty()) << c.name;
      EXPECT_TRUE(r.failure_reason.empty());
    } else if (!c.accept) {
      EXPECT_EQ(r.failure_reason, c.reason_or_status) << c.name;
      EXPECT_FALSE(r.verdict.has_value());
    }
  }
}

TEST(ParseVerdict, CorrectClearsErrorFieldsAndKeepsSuggestion) {
  const auto r = parse_verdict(R"({"status": "CORRECT", "error_step": "Step 1", "error_analysis": "n/a", "improvement_suggestion": "Shorter."})");
  ASSERT_TRUE(r.ok());
  EXPECT_TRUE(r.verdict->error_step.empty());
  EXPECT_TRUE(r.verdict->error_analysis.empty());
  EXPECT_EQ(r.verdict->improvement_suggestion, "Shorter.");
}

TEST(ParseVerdict, RoundTripRandomVerdicts) {
  std::mt19937 rng(2024);
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz ABC0123456789{}[]\"\\:,.\n\t/é∠π`";
  auto random_text = [&](int min_len) {
    std::string s;
    const int n = min_len + static_cast<int>(rng() % 40);
    for (int i = 0; i < n; ++i) {
      // keep multi-byte characters intact by picking whole code points
      static const std::vector<std::string> cps = [&] {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < alphabet.size();) {
          const auto c = static_cast<unsigned char>(alphabet[i]);
          const std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : 4;
          out.push_back(alphabet.substr(i, len));
          i += len;
        }
        return out;
      }();
      s += cps[rng() % cps.size()];
    }
    return s;
  };
  for (int i = 0; i < 1000; ++i) {
    OrmVerdict v;
    v.problem_id = "p" + std::to_string(i);
    v.judge_tag = "judge";
    v.round = static_cast<int>(rng() % 5);
    v.status = (rng() % 2) ? Status::wrong : Status::correct;
    if (v.status == Status::wrong) {
      do v.error_step = random_text(1); while (v.error_step.find_first_not_of(" \t\n") == std::string::npos);
      do v.error_analysis = random_text(1); while (v.error_analysis.find_first_not_of(" \t\n") == std::string::npos);
    }
    v.improvement_suggestion = random_text(0);
    const auto r = parse_verdict(serialize_verdict(v), {v.problem_id, v.judge_tag, v.round});
    ASSERT_TRUE(r.ok()) << serialize_verdict(v) << " -> " << r.failure_reason;
    EXPECT_EQ(*r.verdict, v);
    EXPECT_TRUE(r.diagnostics.empty());
  }
}
