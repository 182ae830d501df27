#include "evoforge/types.hpp"

#include <fstream>
#include <map>
#include <regex>
#include <set>

#include "evoforge/error.hpp"

namespace evoforge {

std::string_view to_string(Producer p) {
  switch (p) {
    case Producer::teacher: return "teacher";
    case Producer::student: return "student";
    case Producer::reflector: return "reflector";
    case Producer::synthetic: return "synthetic";
  }
  return "student";
}

std::string_view to_string(Status s) { return s == Status::correct ? "CORRECT" : "WRONG"; }

Producer parse_producer(std::string_view text) {
  if (text == "teacher") return Producer::teacher;
  if (text == "student") return Producer::student;
  if (text == "reflector") return Producer::reflector;
  if (text == "synthetic") return Producer::synthetic;
  fail(ErrorCode::validation, "unknown producer: " + std::string(text));
}

Status parse_status(std::string_view text) {
  if (text == "CORRECT") return Status::correct;
  if (text == "WRONG") return Status::wrong;
  fail(ErrorCode::validation, "unknown status: " + std::string(text));
}

std::string Stage::label() const {
  switch (kind) {
    case Kind::seed: return "seed";
    case Kind::round: return "round-" + std::to_string(round);
    case Kind::reflection: return "reflection-" + std::to_string(round);
  }
  return "seed";
}

Stage Stage::parse(std::string_view label) {
  if (label == "seed") return seed();
  auto number_after = [&](std::string_view prefix) -> std::optional<int> {
    if (label.substr(0, prefix.size()) != prefix) return std::nullopt;
    const std::string digits(label.substr(prefix.size()));
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) return std::nullopt;
    return std::stoi(digits);
  };
  if (auto r = number_after("round-")) return evolve(*r);
  if (auto r = number_after("reflection-")) return reflection(*r);
  fail(ErrorCode::validation, "unknown stage label: " + std::string(label));
}

int Stage::order() const noexcept {
  switch (kind) {
    case Kind::seed: return 0;
    case Kind::round: return 2 * round;
    case Kind::reflection: return 2 * round + 1;
  }
  return 0;
}

std::string verdict_violation(const OrmVerdict& v) {
  if (v.status == Status::wrong) {
    if (v.error_step.empty()) return "WRONG verdict with empty error_step";
    if (v.error_analysis.empty()) return "WRONG verdict with empty error_analysis";
  } else if (!v.error_step.empty() || !v.error_analysis.empty()) {
    return "CORRECT verdict with non-empty error fields";
  }
  return {};
}

void to_json(json& j, const Stage& s) { j = s.label(); }
void from_json(const json& j, Stage& s) { s = Stage::parse(j.get<std::string>()); }

void to_json(json& j, const Problem& p) {
  j = json{{"id", p.id}, {"question", p.question}, {"images", p.images}, {"ground_answer", p.ground_answer}};
  if (!p.tags.empty()) j["tags"] = p.tags;
}

void from_json(const json& j, Problem& p) {
  p.id = j.at("id").get<std::string>();
  p.question = j.at("question").get<std::string>();
  p.images = j.value("images", std::vector<std::string>{});
  p.ground_answer = j.at("ground_answer").get<std::string>();
  p.tags = j.value("tags", json::object());
  if (!p.tags.is_object()) fail(ErrorCode::validation, "tags must be an object", {{"id", p.id}});
}

void to_json(json& j, const ReasoningPath& p) {
  j = json{{"problem_id", p.problem_id},     {"steps", p.steps},
           {"final_answer", p.final_answer}, {"has_answer", p.has_answer},
           {"producer", to_string(p.producer)}, {"stage", p.stage},
           {"raw_text", p.raw_text}};
}

void from_json(const json& j, ReasoningPath& p) {
  p.problem_id = j.at("problem_id").get<std::string>();
  p.steps = j.at("steps").get<std::vector<std::string>>();
  p.final_answer = j.at("final_answer").get<std::string>();
  p.has_answer = j.at("has_answer").get<bool>();
  p.producer = parse_producer(j.at("producer").get<std::string>());
  p.stage = j.at("stage").get<Stage>();
  p.raw_text = j.at("raw_text").get<std::string>();
}

void to_json(json& j, const OrmVerdict& v) {
  j = json{{"problem_id", v.problem_id},
           {"status", to_string(v.status)},
           {"error_step", v.error_step},
           {"error_analysis", v.error_analysis},
           {"improvement_suggestion", v.improvement_suggestion},
           {"judge_tag", v.judge_tag},
           {"round", v.round}};
}

void from_json(const json& j, OrmVerdict& v) {
  v.problem_id = j.at("problem_id").get<std::string>();
  v.status = parse_status(j.at("status").get<std::string>());
  v.error_step = j.value("error_step", "");
  v.error_analysis = j.value("error_analysis", "");
  v.improvement_suggestion = j.value("improvement_suggestion", "");
  v.judge_tag = j.value("judge_tag", "");
  v.round = j.value("round", 0);
}

std::vector<std::string> split_steps(std::string_view raw_text) {
  static const std::regex kEnumerator(R"(^\s*(step\s*\d+|\d+\s*[.):]|[-*]\s))", std::regex::icase);
  std::vector<std::string> steps;
  std::string current;
  auto flush = [&] {
    const auto b = current.find_first_not_of(" \t\r\n");
    const auto e = current.find_last_not_of(" \t\r\n");
    if (b != std::string::npos) steps.push_back(current.substr(b, e - b + 1));
    current.clear();
  };
  std::size_t pos = 0;
  while (pos <= raw_text.size()) {
    const auto nl = raw_text.find('\n', pos);
    const std::string line(raw_text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    const bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
    if (blank) {
      flush();
    } else {
      if (std::regex_search(line, kEnumerator)) flush();
      if (!current.empty()) current += '\n';
      current += line;
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  flush();
  return steps;
}

bool image_resolvable(std::string_view ref, const std::filesystem::path& base_dir) {
  if (ref.empty()) return false;
  if (ref.starts_with("data:") || ref.starts_with("http://") || ref.starts_with("https://")) return true;
  if (ref.starts_with("sha256:")) {
    const auto hex = ref.substr(7);
    return hex.size() == 64 && hex.find_first_not_of("0123456789abcdef") == std::string_view::npos;
  }
  std::filesystem::path p{std::string(ref)};
  if (p.is_relative()) p = base_dir / p;
  std::error_code ec;
  return std::filesystem::is_regular_file(p, ec);
}

void validate_corpus(const std::vector<Problem>& corpus, const std::filesystem::path& base_dir) {
  if (corpus.empty()) fail(ErrorCode::validation, "empty corpus");
  std::map<std::string, int> seen;
  for (const auto& p : corpus) ++seen[p.id];
  std::vector<std::string> dups;
  for (const auto& [id, n] : seen)
    if (n > 1) dups.push_back(id);
  if (!dups.empty()) fail(ErrorCode::validation, "duplicate problem ids", {{"ids", dups}});
  for (const auto& p : corpus) {
    if (p.id.empty()) fail(ErrorCode::validation, "problem with empty id");
    if (p.question.empty()) fail(ErrorCode::validation, "empty question", {{"id", p.id}});
    if (p.ground_answer.empty()) fail(ErrorCode::validation, "empty ground_answer", {{"id", p.id}});
    for (const auto& img : p.images) {
      if (!image_resolvable(img, base_dir)) {
        fail(ErrorCode::validation, "unresolvable image reference", {{"id", p.id}, {"image", img}});
      }
    }
  }
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      fail(ErrorCode::validation, "malformed JSON line", {{"path", path.string()}, {"line", lineno}, {"error", e.what()}});
    }
  }
  return rows;
}

std::vector<Problem> load_corpus(const std::filesystem::path& path) {
  std::vector<Problem> corpus;
  for (const auto& row : read_jsonl(path)) {
    try {
      corpus.push_back(row.get<Problem>());
    } catch (const json::exception& e) {
      fail(ErrorCode::validation, "malformed problem record", {{"path", path.string()}, {"error", e.what()}});
    }
  }
  validate_corpus(corpus, path.parent_path());
  return corpus;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Problem>& corpus) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  for (const auto& p : corpus) out << json(p).dump() << '\n';
}

}  // namespace evoforge
