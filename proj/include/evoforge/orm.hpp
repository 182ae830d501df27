/// @file orm.hpp
/// @brief ORM dataset curation, balanced test-set construction and judge
///        evaluation with exact per-class accuracies.
#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "evoforge/fraction.hpp"
#include "evoforge/gateway.hpp"
#include "evoforge/types.hpp"

namespace evoforge {

enum class OrmSource { harvested, annotated };
std::string_view to_string(OrmSource source);
OrmSource parse_orm_source(std::string_view text);

struct OrmExample {
  std::string problem_id;
  std::string question;
  std::vector<std::string> images;
  std::string candidate;  // raw path text
  Status label = Status::correct;
  std::string error_step;      // WRONG only
  std::string error_analysis;  // WRONG only
  OrmSource source = OrmSource::harvested;
  std::string ground_answer;  // optional; lets answer-checking judges score the example

  friend bool operator==(const OrmExample&, const OrmExample&) = default;
};

/// Empty when the annotation gating holds, otherwise the broken rule.
std::string orm_example_violation(const OrmExample& e);

void to_json(json& j, const OrmExample& e);
void from_json(const json& j, OrmExample& e);

void write_orm_dataset(const std::filesystem::path& path, const std::vector<OrmExample>& examples);
std::vector<OrmExample> read_orm_dataset(const std::filesystem::path& path);

using LabeledPath = std::pair<Problem, ReasoningPath>;

struct CurationResult {
  std::vector<OrmExample> examples;  // CORRECT block then WRONG block, each in seeded order
  std::int64_t target_per_class = 0;
  std::int64_t n_correct = 0;
  std::int64_t n_wrong = 0;
  std::vector<json> dropped;  // {id, reason} for annotations that were not kept

  std::int64_t shortfall() const noexcept { return 2 * target_per_class - n_correct - n_wrong; }
  json report() const;
};

struct CurationOptions {
  std::uint64_t seed = 0;
  std::size_t batch_size = 64;
};

/// Seeded subsample of `target_per_class` paths per label. WRONG paths are
/// annotated by prompting `annotator` with the judge template; replies that
/// fail to parse, or that call the path CORRECT, are dropped and backfilled
/// from the rest of the pool.
CurationResult curate_orm_dataset(std::span<const LabeledPath> incorrect, std::span<const LabeledPath> correct,
                                  ChatBackend& annotator, std::int64_t target_per_class,
                                  const CurationOptions& options = {});
CurationResult curate_orm_dataset(std::span<const LabeledPath> incorrect, std::span<const LabeledPath> correct,
                                  const BackendConfig& annotator, std::int64_t target_per_class,
                                  const CurationOptions& options = {});

struct RunPools {
  std::vector<LabeledPath> incorrect;  // R_incorrect
  std::vector<LabeledPath> correct;    // D_SFT records
};

/// Reads the pools of a committed run directory without locking it.
RunPools pools_from_run(const std::filesystem::path& run_dir);

struct OrmTestset {
  std::vector<OrmExample> examples;
  std::set<std::string> ids;
};

/// Seeded balanced sample. Any pool id shared with `training_ids` is an error
/// listing the offenders.
OrmTestset build_orm_testset(std::span<const OrmExample> pool, std::int64_t n_pos, std::int64_t n_neg,
                             std::uint64_t seed, const std::set<std::string>& training_ids = {});

struct OrmOutcome {
  std::string problem_id;
  Status label = Status::correct;
  std::optional<Status> predicted;  // nullopt on judge failure
  bool correct = false;
  std::string failure;
};

struct OrmEvalReport {
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
  std::int64_t pos_correct = 0;
  std::int64_t neg_correct = 0;
  std::optional<Fraction> pos_acc;  // absent when the class is empty
  std::optional<Fraction> neg_acc;
  Fraction overall_acc;
  std::vector<OrmOutcome> outcomes;
  std::int64_t failures = 0;

  json to_json() const;
};

/// Judges every candidate; judge failures count as wrong predictions.
OrmEvalReport evaluate_orm(ChatBackend& judge, std::span<const OrmExample> testset, std::uint64_t run_seed = 0);
OrmEvalReport evaluate_orm(const BackendConfig& judge, std::span<const OrmExample> testset, std::uint64_t run_seed = 0);

}  // namespace evoforge
