/// @file metrics.hpp
/// @brief Per-stage accuracy, transition tables between stages, error
///        taxonomy, and the report files written into a run directory.
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "evoforge/fraction.hpp"
#include "evoforge/gateway.hpp"
#include "evoforge/ledger.hpp"

namespace evoforge {

enum class TaxonomyLabel { reasoning, question_misunderstanding, knowledge, calculation, vision_recognition, unclassified };
inline constexpr std::array<TaxonomyLabel, 6> kTaxonomyLabels = {
    TaxonomyLabel::reasoning,   TaxonomyLabel::question_misunderstanding, TaxonomyLabel::knowledge,
    TaxonomyLabel::calculation, TaxonomyLabel::vision_recognition,        TaxonomyLabel::unclassified};
std::string_view to_string(TaxonomyLabel label);
TaxonomyLabel parse_taxonomy(std::string_view text);

struct AccuracyResult {
  Fraction accuracy;
  std::int64_t n_judged = 0;
  std::int64_t n_correct = 0;
  std::int64_t n_failures = 0;  // judge failures, excluded from n_judged
};

/// count(CORRECT) / count(all). Throws Error(validation) on empty input.
Fraction round_accuracy(const std::vector<OrmVerdict>& verdicts);
/// nullopt entries are judge failures: excluded and counted separately.
AccuracyResult round_accuracy(const std::vector<std::optional<OrmVerdict>>& verdicts);

struct TransitionRow {
  int from = 0;
  int to = 0;
  TransitionCounts counts;
  std::int64_t excluded = 0;  // pool members missing from either side
};

/// Consecutive-pair transitions over a fixed evaluation pool. When `pool`
/// is null the first entry's ids define it. Ids outside the pool are
/// rejected; missing ids count as excluded.
std::vector<TransitionRow> transition_table(const std::map<int, std::map<std::string, Status>>& eval_history,
                                            const std::set<std::string>* pool = nullptr);

/// Keyword families checked in priority order: vision, calculation,
/// knowledge, misunderstanding, reasoning. Throws on a CORRECT verdict.
TaxonomyLabel classify_error(const OrmVerdict& verdict);
/// Prompts `classifier` with the five category names and matches its reply.
TaxonomyLabel classify_error(const OrmVerdict& verdict, ChatBackend& classifier);

using TaxonomyHistogram = std::map<TaxonomyLabel, std::int64_t>;
TaxonomyHistogram taxonomy_histogram(const std::vector<OrmVerdict>& verdicts);

struct RoundReport {
  std::string stage;
  int index = 0;
  std::int64_t n_judged = 0;
  std::int64_t n_correct = 0;
  std::optional<Fraction> accuracy;
  std::optional<TransitionRow> transition;  // vs previous stage
  TaxonomyHistogram taxonomy;
};

struct ReportFiles {
  std::vector<RoundReport> rounds;
  std::string source;  // "eval" or "training"
  std::map<std::string, std::string> digests;  // file name -> sha256
};

/// Builds reports from a run directory's committed stages without locking it.
std::vector<RoundReport> round_reports(const std::filesystem::path& run_dir, std::string* source = nullptr);

/// Writes report.json, rounds.csv, transitions.csv and taxonomy.csv.
ReportFiles emit_report(const std::filesystem::path& run_dir);

}  // namespace evoforge
