/// @file engine.hpp
/// @brief Checkpointed stage machine: init -> seed -> round-1..K -> reflection -> final.
///
/// Each stage generates, judges, commits to an in-memory ledger, emits the
/// cumulative SFT snapshot and runs the trainer hook. Only after the hook
/// succeeds are the stage's events appended to ledger.log and its checkpoint
/// written, so a failed or interrupted stage leaves the run at the previous
/// boundary.
#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "evoforge/fraction.hpp"
#include "evoforge/gateway.hpp"
#include "evoforge/ledger.hpp"
#include "evoforge/rundir.hpp"

namespace evoforge {

enum class ReflectionSchedule { after_all_rounds, per_round };
std::string_view to_string(ReflectionSchedule s);

struct RunConfig {
  fs::path corpus_path;
  fs::path run_dir;
  int rounds = 2;
  Fraction seed_fraction{1, 10};
  std::uint64_t rng_seed = 0;
  BackendConfig teacher;
  BackendConfig student;
  BackendConfig judge;
  BackendConfig reflector;
  std::optional<BackendConfig> eval_judge;  // defaults to judge
  fs::path eval_corpus_path;                // empty: no held-out evaluation
  int eval_size = 0;                        // 0: whole eval corpus
  std::string trainer_hook = "noop";        // "noop" or a shell template with {sft_path} and {stage}
  ReflectionSchedule reflection_schedule = ReflectionSchedule::after_all_rounds;
  int max_attempts = 0;

  /// Throws Error(validation).
  void validate() const;

  /// Relative paths in `j` are resolved against `base_dir`.
  static RunConfig from_json(const json& j, const fs::path& base_dir = {});
  json to_json() const;
  static RunConfig load(const fs::path& path);

  /// Run identity: everything except file locations, plus corpus content digests.
  json identity() const;
  std::string digest() const;
};

struct StageCheckpoint {
  std::string run_id;
  std::string stage;  // "init", "seed", "round-2", "reflection-2", "final"
  int stage_index = 0;
  int round = 0;
  LogPosition log;
  std::string state_digest;
  std::string config_digest;
  std::uint64_t rng_seed = 0;
  std::map<std::string, std::string> files;  // file name -> sha256
  BackendConfig student;                     // active student after this stage
  json hook_state = json::object();
};

void to_json(json& j, const StageCheckpoint& c);
void from_json(const json& j, StageCheckpoint& c);

/// Expected stage labels after "init", in order.
std::vector<std::string> stage_plan(const RunConfig& config);

struct HookContext {
  std::string stage;
  fs::path run_dir;
  fs::path stage_dir;
  fs::path sft_path;
  const EvolutionLedger* ledger = nullptr;
};

/// The external fine-tuning step. After train() returns, the engine reads
/// `<stage_dir>/backend.json` (if present) as the next student backend.
class TrainerHook {
 public:
  virtual ~TrainerHook() = default;
  virtual void train(const HookContext& ctx) = 0;
  virtual json state() const { return json::object(); }
  virtual void restore(const json& state, const EvolutionLedger& ledger) {
    (void)state;
    (void)ledger;
  }
};

class NoopHook : public TrainerHook {
 public:
  void train(const HookContext&) override {}
};

/// Runs the template through /bin/sh with {sft_path} and {stage} substituted
/// (shell-quoted). Nonzero exit throws Error(hook_failure).
class ShellHook : public TrainerHook {
 public:
  explicit ShellHook(std::string command_template) : template_(std::move(command_template)) {}
  void train(const HookContext& ctx) override;
  std::string command_for(const HookContext& ctx) const;

 private:
  std::string template_;
};

/// Maps a role ("teacher", "student", "judge", "reflector", "eval_judge")
/// and its config to a live backend.
using BackendResolver = std::function<std::shared_ptr<ChatBackend>(const std::string& role, const BackendConfig&)>;

struct EngineOptions {
  BackendResolver resolver;             // default: make_backend with the corpus directory as asset root
  std::shared_ptr<TrainerHook> hook;    // default: from config.trainer_hook
  std::function<void(const std::string&)> progress;
  /// Test seam: called at named points of a stage commit ("before-log",
  /// "after-log", "after-checkpoint"); throwing simulates a crash.
  std::function<void(const std::string& point, const std::string& stage)> fault;
};

struct RunManifest {
  json body;
  std::string digest;  // sha256 of manifest.json
};

/// One JSON-lines record per sft_record:
/// {id, messages:[user(question+images), assistant(raw_text)], producer, stage},
/// sorted by (stage order, id). Returns the file digest.
std::string emit_sft_dataset(const EvolutionLedger& ledger, const std::map<std::string, Problem>& corpus,
                             const fs::path& out, const fs::path& asset_root);

class Engine {
 public:
  /// Scaffolds a fresh run directory and commits the partition ("init").
  static Engine init(const RunConfig& config, EngineOptions options = {});
  /// Reopens a run: verifies file digests, replays the log up to the latest
  /// checkpoint, truncates any uncommitted tail, and restores the hook.
  /// `live` (when given) must match the stored config or Error(config_drift).
  static Engine open(const fs::path& run_dir, EngineOptions options = {}, const RunConfig* live = nullptr);

  Engine(Engine&&) noexcept;
  Engine& operator=(Engine&&) noexcept;
  ~Engine();

  /// Label of the next stage, or "" when sealed.
  std::string next_stage() const;
  bool sealed() const { return next_stage().empty(); }

  StageCheckpoint run_seed_stage();
  StageCheckpoint run_evolve_round();
  StageCheckpoint run_reflection_stage();
  RunManifest finalize();
  /// Runs every remaining stage, including finalize.
  RunManifest run_all();
  /// Runs the named stage if it is next; Error(stage_order) otherwise.
  StageCheckpoint run_stage(const std::string& label);

  const RunConfig& config() const;
  const EvolutionLedger& ledger() const;
  const StageCheckpoint& checkpoint() const;
  const std::map<std::string, Problem>& corpus() const;
  std::vector<StageCheckpoint> checkpoints() const;

 private:
  struct State;
  explicit Engine(std::unique_ptr<State> state);
  std::unique_ptr<State> s_;
};

/// Reads config and latest checkpoint without locking or modifying anything.
std::pair<RunConfig, StageCheckpoint> resume(const fs::path& run_dir);

/// Plan for --dry-run: partition sizes and stage sequence; touches nothing.
json dry_run_plan(const RunConfig& config);

}  // namespace evoforge
