#include "evoforge/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <regex>
#include <set>

#include "evoforge/error.hpp"

namespace evoforge {
namespace {

constexpr std::string_view kSpace = " \t\r\n";

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(kSpace);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(kSpace);
  return s.substr(b, e - b + 1);
}

PromptMessage with_images(std::string text, const Problem& problem) {
  PromptMessage msg;
  msg.role = PromptMessage::Role::user;
  msg.parts.push_back({ContentPart::Kind::text, std::move(text)});
  for (const auto& img : problem.images) msg.parts.push_back({ContentPart::Kind::image, img});
  return msg;
}

void require_problem(const Problem& problem) {
  if (problem.id.empty() || problem.question.empty() || problem.ground_answer.empty()) {
    fail(ErrorCode::validation, "invalid problem", {{"id", problem.id}});
  }
}

}  // namespace

std::string PromptMessage::text() const {
  std::string out;
  for (const auto& p : parts)
    if (p.kind == ContentPart::Kind::text) out += p.value;
  return out;
}

std::vector<std::string> PromptMessage::images() const {
  std::vector<std::string> out;
  for (const auto& p : parts)
    if (p.kind == ContentPart::Kind::image) out.push_back(p.value);
  return out;
}

std::string_view to_string(PromptMessage::Role role) {
  return role == PromptMessage::Role::system ? "system" : "user";
}

std::string render_template(std::string_view tpl, const std::map<std::string, std::string>& slots) {
  std::string out;
  out.reserve(tpl.size());
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      const auto close = tpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto it = slots.find(std::string(tpl.substr(i + 1, close - i - 1)));
        if (it != slots.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tpl[i++]);
  }
  return out;
}

PromptMessage build_solve_prompt(const Problem& problem) {
  require_problem(problem);
  return with_images(render_template(templates::solve, {{"question", problem.question}}), problem);
}

PromptMessage build_judge_prompt(const Problem& problem, const ReasoningPath& predicted) {
  require_problem(problem);
  if (predicted.problem_id != problem.id) {
    fail(ErrorCode::validation, "prediction does not belong to problem",
         {{"problem_id", problem.id}, {"path_problem_id", predicted.problem_id}});
  }
  if (trim(predicted.raw_text).empty()) {
    fail(ErrorCode::validation, "empty prediction text", {{"problem_id", problem.id}});
  }
  return with_images(render_template(templates::judge, {{"question", problem.question},
                                                        {"predict", predicted.raw_text},
                                                        {"ground_answer", problem.ground_answer}}),
                     problem);
}

PromptMessage build_reflection_prompt(const Problem& problem, const ReasoningPath& wrong, const OrmVerdict& verdict) {
  require_problem(problem);
  if (verdict.status != Status::wrong) {
    fail(ErrorCode::validation, "reflection requires a WRONG verdict", {{"problem_id", problem.id}});
  }
  if (wrong.problem_id != problem.id || verdict.problem_id != problem.id) {
    fail(ErrorCode::validation, "reflection inputs refer to different problems", {{"problem_id", problem.id}});
  }
  return with_images(render_template(templates::reflect, {{"question", problem.question},
                                                          {"wrong_answer", wrong.raw_text},
                                                          {"wrong_step", verdict.error_step},
                                                          {"wrong_analysis", verdict.error_analysis}}),
                     problem);
}

std::optional<std::string> extract_final_answer(std::string_view raw_text,
                                                std::span<const std::string> fallback_markers) {
  auto after_last = [&](std::string_view marker) -> std::optional<std::string> {
    if (marker.empty()) return std::nullopt;
    const auto pos = raw_text.rfind(marker);
    if (pos == std::string_view::npos) return std::nullopt;
    std::string_view rest = raw_text.substr(pos + marker.size());
    if (const auto nl = rest.find('\n'); nl != std::string_view::npos) rest = rest.substr(0, nl);
    rest = trim(rest);
    if (!rest.empty() && rest.front() == ':') rest = trim(rest.substr(1));
    while (!rest.empty() && std::string_view(".,;:!?").find(rest.back()) != std::string_view::npos) {
      rest.remove_suffix(1);
      rest = trim(rest);
    }
    return std::string(rest);
  };
  if (auto found = after_last(kAnswerMarker)) return found;
  for (const auto& m : fallback_markers)
    if (auto found = after_last(m)) return found;
  return std::nullopt;
}

std::string canonicalize_answer(std::string_view answer) {
  std::string s(trim(answer));
  while (!s.empty() && std::string_view(".,;:!? ").find(s.back()) != std::string_view::npos) s.pop_back();
  auto strip_wrapper = [&](std::string_view open, std::string_view close) {
    if (s.size() >= open.size() + close.size() && s.starts_with(open) && s.ends_with(close)) {
      s = std::string(trim(std::string_view(s).substr(open.size(), s.size() - open.size() - close.size())));
      return true;
    }
    return false;
  };
  while (strip_wrapper("$", "$") || strip_wrapper("\\boxed{", "}")) {
  }
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  while (!out.empty() && std::string_view(".,;:!?").find(out.back()) != std::string_view::npos) out.pop_back();
  return out;
}

// ---------------------------------------------------------------------------
// Verdict parsing
// ---------------------------------------------------------------------------

namespace {

// Balanced top-level {...} spans, ignoring braces inside string literals.
std::vector<std::pair<std::size_t, std::size_t>> object_spans(std::string_view text) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (depth > 0 && in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (depth > 0 && c == '"') {
      in_string = true;
    } else if (c == '{') {
      if (depth++ == 0) start = i;
    } else if (c == '}' && depth > 0) {
      if (--depth == 0) spans.emplace_back(start, i + 1);
    }
  }
  return spans;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

std::string normalize_quotes(std::string s) {
  for (std::string_view q : {"“", "”", "„", "‟", "″"}) s = replace_all(std::move(s), q, "\"");
  return s;
}

bool has_unicode_quotes(std::string_view s) {
  return s.find("“") != std::string_view::npos || s.find("”") != std::string_view::npos ||
         s.find("„") != std::string_view::npos || s.find("‟") != std::string_view::npos ||
         s.find("″") != std::string_view::npos;
}

// Parses one candidate object; records top-level duplicate keys.
std::optional<json> parse_object(const std::string& text, bool& duplicate) {
  std::vector<std::set<std::string>> keys;
  duplicate = false;
  auto cb = [&](int depth, json::parse_event_t event, json& parsed) {
    if (event == json::parse_event_t::object_start) keys.emplace_back();
    if (event == json::parse_event_t::object_end && !keys.empty()) keys.pop_back();
    if (event == json::parse_event_t::key && depth == 1 && !keys.empty()) {
      if (!keys.back().insert(parsed.get<std::string>()).second) duplicate = true;
    }
    return true;
  };
  json j = json::parse(text, cb, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

}  // namespace

VerdictParseResult parse_verdict(std::string_view raw_text, const VerdictContext& context) {
  VerdictParseResult result;
  auto reject = [&](std::string_view reason) {
    result.failure_reason = std::string(reason);
    return result;
  };

  // Candidates that parse as JSON objects; unicode quotes are normalized only
  // when nothing parses as written.
  std::string body(raw_text);
  auto collect = [&](const std::string& text, std::vector<std::pair<json, bool>>& parsed,
                     std::pair<std::size_t, std::size_t>& chosen) {
    const auto spans = object_spans(text);
    for (const auto& [b, e] : spans) {
      bool dup = false;
      if (auto obj = parse_object(text.substr(b, e - b), dup)) {
        parsed.emplace_back(std::move(*obj), dup);
        chosen = {b, e};
      }
    }
    return spans.size();
  };
  std::vector<std::pair<json, bool>> parsed;
  std::pair<std::size_t, std::size_t> chosen{};
  std::size_t n_spans = collect(body, parsed, chosen);
  if (parsed.empty() && has_unicode_quotes(body)) {
    body = normalize_quotes(std::move(body));
    result.diagnostics.emplace_back("unicode-quotes-normalized");
    n_spans = collect(body, parsed, chosen);
  }
  if (n_spans == 0) return reject(kNoJsonObject);
  if (parsed.empty()) return reject(kMalformedJson);
  if (parsed.size() > 1) return reject(kMultipleObjects);
  if (parsed.front().second) return reject(kDuplicateKey);
  const json& obj = parsed.front().first;

  // Text outside the object: code fences (with an optional language tag) and prose.
  std::string outside = body.substr(0, chosen.first) + "\n" + body.substr(chosen.second);
  if (outside.find("```") != std::string::npos) {
    result.diagnostics.emplace_back("fence-stripped");
    static const std::regex kFence(R"(```[A-Za-z]*)");
    outside = std::regex_replace(outside, kFence, "");
  }
  if (!trim(outside).empty()) result.diagnostics.emplace_back("surrounding-text-trimmed");

  if (!obj.contains("status")) return reject(kMissingStatus);
  if (!obj["status"].is_string()) return reject(kStatusEnum);
  const auto status_text = obj["status"].get<std::string>();
  if (status_text != "CORRECT" && status_text != "WRONG") return reject(kStatusEnum);

  auto text_field = [&](const char* key, std::string& out) -> bool {
    if (!obj.contains(key) || obj[key].is_null()) return true;
    if (!obj[key].is_string()) return false;
    out = obj[key].get<std::string>();
    return true;
  };
  OrmVerdict v;
  v.problem_id = context.problem_id;
  v.judge_tag = context.judge_tag;
  v.round = context.round;
  v.status = parse_status(status_text);
  if (!text_field("error_step", v.error_step) || !text_field("error_analysis", v.error_analysis) ||
      !text_field("improvement_suggestion", v.improvement_suggestion)) {
    return reject(kFieldType);
  }

  for (const auto& [key, _] : obj.items()) {
    if (key != "status" && key != "error_step" && key != "error_analysis" && key != "improvement_suggestion") {
      result.diagnostics.emplace_back("extra-keys-ignored");
      break;
    }
  }

  if (v.status == Status::wrong) {
    if (trim(v.error_step).empty() || trim(v.error_analysis).empty()) return reject(kWrongMissingFields);
  } else if (!v.error_step.empty() || !v.error_analysis.empty()) {
    v.error_step.clear();
    v.error_analysis.clear();
    result.diagnostics.emplace_back("correct-error-fields-cleared");
  }
  result.verdict = std::move(v);
  return result;
}

std::string serialize_verdict(const OrmVerdict& verdict) {
  nlohmann::ordered_json j;
  j["status"] = to_string(verdict.status);
  j["error_step"] = verdict.error_step;
  j["error_analysis"] = verdict.error_analysis;
  j["improvement_suggestion"] = verdict.improvement_suggestion;
  return j.dump(2);
}

}  // namespace evoforge
