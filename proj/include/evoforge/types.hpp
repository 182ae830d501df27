/// @file types.hpp
/// @brief Core domain records shared by every evoforge module.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace evoforge {

using json = nlohmann::json;

enum class Producer { teacher, student, reflector, synthetic };
enum class Status { correct, wrong };

std::string_view to_string(Producer p);
std::string_view to_string(Status s);  // "CORRECT" / "WRONG"
Producer parse_producer(std::string_view text);
Status parse_status(std::string_view text);

/// Where in the pipeline a path was produced. Reflection stages carry the
/// round after which they ran (K for the default after-all-rounds schedule).
struct Stage {
  enum class Kind { seed, round, reflection };
  Kind kind = Kind::seed;
  int round = 0;

  static Stage seed() { return {Kind::seed, 0}; }
  static Stage evolve(int r) { return {Kind::round, r}; }
  static Stage reflection(int after_round) { return {Kind::reflection, after_round}; }

  /// "seed", "round-3", "reflection-2".
  std::string label() const;
  static Stage parse(std::string_view label);

  /// Total order used for emission: seed < round 1 < reflection after 1 < round 2 < ...
  int order() const noexcept;

  friend bool operator==(const Stage&, const Stage&) = default;
};

struct Problem {
  std::string id;
  std::string question;
  std::vector<std::string> images;
  std::string ground_answer;
  json tags = json::object();
};

struct ReasoningPath {
  std::string problem_id;
  std::vector<std::string> steps;
  std::string final_answer;
  bool has_answer = false;  // false when the closing marker was absent
  Producer producer = Producer::student;
  Stage stage;
  std::string raw_text;

  friend bool operator==(const ReasoningPath&, const ReasoningPath&) = default;
};

struct OrmVerdict {
  std::string problem_id;
  Status status = Status::wrong;
  std::string error_step;
  std::string error_analysis;
  std::string improvement_suggestion;
  std::string judge_tag;
  int round = 0;

  friend bool operator==(const OrmVerdict&, const OrmVerdict&) = default;
};

/// Empty string when the invariants hold, otherwise the violated rule.
std::string verdict_violation(const OrmVerdict& v);

void to_json(json& j, const Stage& s);
void from_json(const json& j, Stage& s);
void to_json(json& j, const Problem& p);
void from_json(const json& j, Problem& p);
void to_json(json& j, const ReasoningPath& p);
void from_json(const json& j, ReasoningPath& p);
void to_json(json& j, const OrmVerdict& v);
void from_json(const json& j, OrmVerdict& v);

/// Split raw model text into steps: a new step starts at a line opening
/// with an enumerator ("Step 3", "2.", "4)", "-") or after a blank line.
std::vector<std::string> split_steps(std::string_view raw_text);

/// True for data: URIs, http(s) URLs, "sha256:" payload digests, and paths
/// that exist (relative paths resolved against base_dir).
bool image_resolvable(std::string_view ref, const std::filesystem::path& base_dir);

/// Validates a corpus: unique ids, non-empty question/answer, resolvable images.
void validate_corpus(const std::vector<Problem>& corpus, const std::filesystem::path& base_dir);

/// JSON-lines loader; image references are checked against the file's directory.
std::vector<Problem> load_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const std::vector<Problem>& corpus);

/// Reads every non-blank line of a JSON-lines file.
std::vector<json> read_jsonl(const std::filesystem::path& path);

}  // namespace evoforge
