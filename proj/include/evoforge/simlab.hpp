/// @file simlab.hpp
/// @brief Synthetic worlds with latent difficulty, a scalar student skill,
///        confusable judges and a reflector, wired into the real engine.
#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "evoforge/engine.hpp"
#include "evoforge/metrics.hpp"

namespace evoforge {

enum class DifficultyLaw { uniform, bimodal, threshold, staged };
enum class StudentMode { stochastic, threshold };

std::string_view to_string(DifficultyLaw law);
std::string_view to_string(StudentMode mode);
DifficultyLaw parse_difficulty_law(std::string_view text);
StudentMode parse_student_mode(std::string_view text);

struct JudgeProfile {
  std::string name = "oracle";
  double false_accept = 0.0;
  double false_reject = 0.0;

  /// "oracle" (0, 0), "ours" (fr 0.058), "binary" (fr 0.146, fa 0.001).
  static JudgeProfile named(std::string_view name);
};

struct WorldParams {
  int n = 2000;
  int eval_n = 1000;  // held-out pool, 0 for none
  DifficultyLaw law = DifficultyLaw::uniform;
  std::uint64_t seed = 7;
  double skill0 = 0.3;
  double gain = 0.6;
  double teacher_accuracy = 1.0;
  double recovery = 0.5;  // reflector
  JudgeProfile judge;
  StudentMode mode = StudentMode::threshold;
  // bimodal: two modes with uniform spread
  double bimodal_low = 0.25, bimodal_high = 0.75, bimodal_spread = 0.15;
  // staged: seed pool at d=0, `staged_easy` remain problems at d=0, the rest at d=1
  Fraction seed_fraction{1, 10};
  int staged_easy = 0;

  void validate() const;
};

void to_json(json& j, const WorldParams& p);
void from_json(const json& j, WorldParams& p);

struct SyntheticWorld {
  WorldParams params;
  std::vector<Problem> problems;       // training corpus
  std::vector<Problem> eval_problems;  // disjoint ids
  std::map<std::string, double> difficulty;
  double skill = 0.0;
  std::set<std::string> trained;
};

/// Deterministic in `params`. Each problem's tags carry its difficulty and
/// the scripted correct and incorrect solution texts.
SyntheticWorld make_world(const WorldParams& params);

double success_probability(double skill, double difficulty, StudentMode mode);

/// Scripted attempt; `nonce` drives the stochastic draw.
ReasoningPath student_attempt(const SyntheticWorld& world, const Problem& problem, StudentMode mode,
                              std::uint64_t nonce, Stage stage = Stage::evolve(1));

/// s' = min(1, s + g * |newly trained| / |corpus|). Unknown ids are rejected.
void training_update(SyntheticWorld& world, const std::set<std::string>& trained_ids);

/// Truth is answer agreement with the ground answer; the verdict flips with
/// the profile's confusion rates. WRONG verdicts carry a scripted analysis
/// whose category follows the error-taxonomy weights.
OrmVerdict mock_judge(const SyntheticWorld& world, const Problem& problem, const ReasoningPath& path,
                      std::uint64_t nonce, int round = 0);

bool truly_correct(const Problem& problem, const ReasoningPath& path);

/// Backends answering from a shared world: sim://teacher, sim://student,
/// sim://judge, sim://reflector.
BackendResolver sim_resolver(std::shared_ptr<SyntheticWorld> world);

/// Trainer hook applying training_update with the stage's full D_SFT.
class SimTrainer : public TrainerHook {
 public:
  explicit SimTrainer(std::shared_ptr<SyntheticWorld> world) : world_(std::move(world)) {}
  void train(const HookContext& ctx) override;
  json state() const override;
  void restore(const json& state, const EvolutionLedger& ledger) override;

 private:
  std::shared_ptr<SyntheticWorld> world_;
};

struct SimRunOptions {
  std::filesystem::path run_dir;
  int rounds = 3;
  ReflectionSchedule reflection_schedule = ReflectionSchedule::after_all_rounds;
  int max_attempts = 0;
  int concurrency = 2;
  bool emit_report = true;
  std::function<void(const std::string&)> progress;
};

struct SimulationResult {
  RunManifest manifest;
  std::vector<RoundReport> reports;
  EvolutionLedger ledger;
  double final_skill = 0.0;
  std::int64_t sft_records = 0;
  std::int64_t truly_wrong_records = 0;  // oracle purity check on the final D_SFT
  std::vector<Violation> violations;     // check_invariants at every committed stage
  std::chrono::milliseconds elapsed{0};
};

/// Writes the world's corpora under run_dir/inputs and returns the run config
/// wired to sim:// backends and the "simlab" trainer hook.
RunConfig simulation_config(const SyntheticWorld& world, const SimRunOptions& options);
/// Resolver and trainer hook bound to `live`, for Engine::init or Engine::open.
EngineOptions simulation_engine_options(std::shared_ptr<SyntheticWorld> live, const SimRunOptions& options);

/// Writes the world's corpora under run_dir/inputs, then runs
/// init -> seed -> rounds -> reflection -> final with simlab backends.
SimulationResult run_simulation(const SyntheticWorld& world, const SimRunOptions& options);

/// Re-checks invariants on every stage-commit prefix of the history.
std::vector<Violation> stage_violations(const EvolutionLedger& ledger);

}  // namespace evoforge
