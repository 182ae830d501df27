/// @file prompts.hpp
/// @brief Prompt rendering for the solve / judge / reflection templates and
///        parsing of model outputs (final answers, verdict JSON).
#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evoforge/types.hpp"

namespace evoforge {

namespace templates {
// Verbatim copies of templates/*.txt, embedded at build time.
extern const std::string_view solve;
extern const std::string_view judge;
extern const std::string_view reflect;
}  // namespace templates

inline constexpr std::string_view kAnswerMarker = "The answer to this problem is";

struct ContentPart {
  enum class Kind { text, image };
  Kind kind = Kind::text;
  std::string value;  // text, or an image reference

  friend bool operator==(const ContentPart&, const ContentPart&) = default;
};

struct PromptMessage {
  enum class Role { system, user };
  Role role = Role::user;
  std::vector<ContentPart> parts;

  /// Concatenation of the text parts.
  std::string text() const;
  std::vector<std::string> images() const;
};

std::string_view to_string(PromptMessage::Role role);

/// Replaces `{name}` for every name in `slots`, in a single pass; braces that
/// do not form a known slot are left untouched (the judge template carries a
/// literal JSON block).
std::string render_template(std::string_view tpl, const std::map<std::string, std::string>& slots);

PromptMessage build_solve_prompt(const Problem& problem);
PromptMessage build_judge_prompt(const Problem& problem, const ReasoningPath& predicted);
PromptMessage build_reflection_prompt(const Problem& problem, const ReasoningPath& wrong, const OrmVerdict& verdict);

/// Text after the last occurrence of the marker, up to the end of that line,
/// trimmed of surrounding whitespace, a leading colon and trailing
/// punctuation. nullopt when no marker occurs; an empty string when the marker
/// is present but nothing follows it.
std::optional<std::string> extract_final_answer(std::string_view raw_text,
                                                std::span<const std::string> fallback_markers = {});

/// Comparison form of an answer: lowercased, whitespace removed, with `$..$`
/// and `\boxed{..}` wrappers and trailing punctuation dropped.
std::string canonicalize_answer(std::string_view answer);

struct VerdictContext {
  std::string problem_id;
  std::string judge_tag;
  int round = 0;
};

struct VerdictParseResult {
  std::optional<OrmVerdict> verdict;
  std::vector<std::string> diagnostics;
  std::string failure_reason;  // empty on success

  bool ok() const noexcept { return verdict.has_value(); }
};

// failure_reason values
inline constexpr std::string_view kNoJsonObject = "no-json-object";
inline constexpr std::string_view kMultipleObjects = "multiple-objects";
inline constexpr std::string_view kMalformedJson = "malformed-json";
inline constexpr std::string_view kDuplicateKey = "duplicate-key";
inline constexpr std::string_view kMissingStatus = "missing-status";
inline constexpr std::string_view kStatusEnum = "status-enum";
inline constexpr std::string_view kFieldType = "field-type";
inline constexpr std::string_view kWrongMissingFields = "wrong-missing-error-fields";

/// Parses a judge reply holding exactly one JSON object in the feedback
/// format. Recoverable repairs are listed in `diagnostics`.
VerdictParseResult parse_verdict(std::string_view raw_text, const VerdictContext& context = {});

/// The four-key feedback object (status, error_step, error_analysis,
/// improvement_suggestion) in template order.
std::string serialize_verdict(const OrmVerdict& verdict);

}  // namespace evoforge
