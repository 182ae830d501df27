/// @file ledger.hpp
/// @brief Dataset partition state (seed pool / D_SFT / D_remain / R_incorrect)
///        as an append-only event log with a materialized cache.
///
/// Every mutating operation validates its whole batch first, then emits
/// events and folds them through apply_event(). Replaying `history` from an
/// empty ledger therefore reproduces the cached sets exactly; check_invariants
/// verifies that.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "evoforge/fraction.hpp"
#include "evoforge/types.hpp"

namespace evoforge {

struct LedgerEvent {
  std::int64_t seq = 0;
  std::string event;  // see kEvent* below
  std::string stage;  // stage label
  int round = 0;
  std::string problem_id;
  std::string status;  // "CORRECT", "WRONG" or empty
  std::string timestamp;
  json payload = json::object();

  friend bool operator==(const LedgerEvent&, const LedgerEvent&) = default;
};

inline constexpr const char* kEventPartition = "seed-partition";
inline constexpr const char* kEventSeedCommit = "seed-commit";
inline constexpr const char* kEventSeedClose = "seed-close";
inline constexpr const char* kEventCommit = "commit";
inline constexpr const char* kEventRoundClose = "round-close";
inline constexpr const char* kEventExhausted = "exhausted";
inline constexpr const char* kEventReflection = "reflection";
inline constexpr const char* kEventReflectionSkip = "reflection-skip";
inline constexpr const char* kEventReflectionClose = "reflection-close";
inline constexpr const char* kEventEval = "eval";
inline constexpr const char* kEventStageCommit = "stage-commit";

void to_json(json& j, const LedgerEvent& e);
void from_json(const json& j, LedgerEvent& e);

struct IncorrectEntry {
  ReasoningPath path;
  OrmVerdict verdict;
};

struct SftRecord {
  std::string problem_id;
  ReasoningPath path;
  OrmVerdict verdict;
};

struct EvolutionLedger {
  std::set<std::string> corpus_ids;
  std::set<std::string> seed_pool;  // pending teacher distillation; empty once the seed stage commits
  std::set<std::string> sft_ids;
  std::set<std::string> remain_ids;
  std::set<std::string> exhausted_ids;  // subset of remain_ids, no longer attempted
  std::set<std::string> reflected_ids;
  std::vector<IncorrectEntry> incorrect_pool;
  std::vector<SftRecord> sft_records;
  std::map<std::string, int> attempts;
  std::map<int, std::map<std::string, Status>> eval_outcomes;  // eval index -> per-problem status
  int round_index = 0;
  int max_attempts = 0;  // 0 = unbounded
  bool seed_committed = false;
  std::vector<LedgerEvent> history;

  /// Canonical JSON of the materialized state (history excluded).
  json state_json() const;
  std::string state_digest() const;
};

/// Clock used for event timestamps; tests may pin it.
using Clock = std::function<std::string()>;
Clock& ledger_clock();
std::string iso8601_now();

/// Deterministic seed-pool selection: the ceil(fraction * n) ids with the
/// smallest seeded hash rank. Shared with simlab's staged world.
std::set<std::string> select_seed_pool(const std::vector<std::string>& ids, const Fraction& fraction,
                                       std::uint64_t rng_seed);

EvolutionLedger partition_init(const std::vector<Problem>& corpus, const Fraction& seed_fraction,
                               std::uint64_t rng_seed, int max_attempts = 0);

/// Teacher verdicts on the seed pool. CORRECT paths enter D_SFT; every other
/// seed id (WRONG, answerless, or never judged) returns to D_remain. WRONG
/// teacher paths are discarded, not added to the incorrect pool.
EvolutionLedger commit_seed(const EvolutionLedger& ledger,
                            const std::vector<std::pair<ReasoningPath, OrmVerdict>>& verdicts);

EvolutionLedger commit_round(const EvolutionLedger& ledger,
                             const std::vector<std::pair<ReasoningPath, OrmVerdict>>& verdicts);

/// Entries eligible for reflection: the latest WRONG entry per problem,
/// skipping problems already in D_SFT or already reflected. Sorted by id.
std::vector<IncorrectEntry> reflection_candidates(const EvolutionLedger& ledger);

EvolutionLedger commit_reflection(const EvolutionLedger& ledger,
                                  const std::vector<std::pair<ReasoningPath, OrmVerdict>>& reflected,
                                  int after_round);

/// Held-out evaluation verdicts for one eval index (0 = after seed).
EvolutionLedger record_eval(const EvolutionLedger& ledger, int eval_index, const std::string& stage_label,
                            const std::vector<OrmVerdict>& verdicts);

/// Appends a stage marker (no state change).
EvolutionLedger mark_stage(const EvolutionLedger& ledger, const std::string& stage_label, json payload);

struct Violation {
  std::string rule;  // disjointness, conservation, monotonicity, verdict-gating, replay
  std::string detail;
};

std::vector<Violation> check_invariants(const EvolutionLedger& ledger);

/// Folds one event into the state. Throws Error(corruption) on events that
/// cannot apply.
void apply_event(EvolutionLedger& ledger, const LedgerEvent& event);
EvolutionLedger replay(const std::vector<LedgerEvent>& history);

enum class Outcome { correct, incorrect, unattempted };
std::string_view to_string(Outcome o);

struct TransitionRecord {
  std::string problem_id;
  int from_round = 0;
  int to_round = 0;
  Outcome from_status = Outcome::unattempted;
  Outcome to_status = Outcome::unattempted;
};

struct TransitionCounts {
  std::int64_t correct_correct = 0;
  std::int64_t correct_incorrect = 0;
  std::int64_t incorrect_correct = 0;
  std::int64_t incorrect_incorrect = 0;
  std::int64_t only_from = 0;  // judged in from_round only
  std::int64_t only_to = 0;    // judged in to_round only

  std::int64_t joint() const noexcept {
    return correct_correct + correct_incorrect + incorrect_correct + incorrect_incorrect;
  }
};

struct TransitionReport {
  std::vector<TransitionRecord> records;
  TransitionCounts counts;
};

enum class TransitionSource { evaluation, training };

/// Per-problem status change between two committed rounds. Evaluation source
/// uses held-out eval verdicts (eval index); training source uses commit
/// history (0 = seed, i = round i).
TransitionReport transitions(const EvolutionLedger& ledger, int from_round, int to_round,
                             TransitionSource source = TransitionSource::evaluation);

}  // namespace evoforge
