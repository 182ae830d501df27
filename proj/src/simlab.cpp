#include "evoforge/simlab.hpp"

#include <algorithm>
#include <cstdio>

#include "evoforge/digest.hpp"
#include "evoforge/error.hpp"
#include "evoforge/mocks.hpp"
#include "evoforge/prompts.hpp"

namespace evoforge {
namespace {

struct AnalysisTemplate {
  TaxonomyLabel label;
  double weight;  // percent share of reported errors for one backbone
  const char* step;
  const char* analysis;
  const char* suggestion;
};

const std::vector<AnalysisTemplate>& analysis_templates() {
  static const std::vector<AnalysisTemplate> t = {
      {TaxonomyLabel::reasoning, 63.1, "Step 2",
       "The reasoning in this step does not follow from the previous one, so the conclusion is unjustified.",
       "Justify each inference before moving on."},
      {TaxonomyLabel::question_misunderstanding, 20.8, "Step 1",
       "The solution misinterprets what the question asks for and answers a different quantity.",
       "Restate the target quantity before solving."},
      {TaxonomyLabel::knowledge, 7.7, "Step 2", "The step applies the wrong formula for this quantity.",
       "Recall the correct relation and reapply it."},
      {TaxonomyLabel::calculation, 1.1, "Step 2", "An arithmetic slip in this step produces the wrong value.",
       "Redo the arithmetic carefully."},
      {TaxonomyLabel::vision_recognition, 0.6, "Step 1", "The solution misreads the angle marking in the diagram.",
       "Re-examine the diagram before using its values."},
  };
  return t;
}

const AnalysisTemplate& pick_template(double u) {
  const auto& t = analysis_templates();
  double total = 0;
  for (const auto& a : t) total += a.weight;
  double acc = 0;
  for (const auto& a : t) {
    acc += a.weight / total;
    if (u < acc) return a;
  }
  return t.back();
}

std::string make_id(char prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%c%06d", prefix, i);
  return buf;
}

Problem make_problem(const std::string& id, std::uint64_t seed, double difficulty) {
  Problem p;
  p.id = id;
  p.question = "Synthetic problem " + id + ": determine the hidden token.";
  char tok[16];
  std::snprintf(tok, sizeof tok, "k%06llx",
                static_cast<unsigned long long>(hash_combine(hash_combine(seed, "answer"), id) & 0xffffffULL));
  p.ground_answer = tok;
  p.tags = {{"difficulty", difficulty},
            {"correct_solution", scripted_solution(p, p.ground_answer, true)},
            {"wrong_solution", scripted_solution(p, wrong_answer_for(p), false)}};
  return p;
}

std::string solution_text(const Problem& p, bool correct) {
  return p.tags.at(correct ? "correct_solution" : "wrong_solution").get<std::string>();
}

double bounded(double x) { return std::clamp(x, 0.0, 1.0); }

std::vector<std::string> hash_ranked(std::vector<std::string> ids, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end(), [seed](const std::string& a, const std::string& b) {
    const auto ha = hash_combine(seed, a), hb = hash_combine(seed, b);
    return ha != hb ? ha < hb : a < b;
  });
  return ids;
}

std::map<std::string, double> draw_difficulties(const std::vector<std::string>& ids, const WorldParams& p,
                                                DifficultyLaw law, const std::set<std::string>& seed_pool) {
  std::map<std::string, double> d;
  const std::uint64_t key = hash_combine(p.seed, "difficulty");
  switch (law) {
    case DifficultyLaw::uniform:
      for (const auto& id : ids) d[id] = unit_uniform(hash_combine(key, id));
      break;
    case DifficultyLaw::bimodal:
      for (const auto& id : ids) {
        const double centre = unit_uniform(hash_combine(hash_combine(key, "mode"), id)) < 0.5 ? p.bimodal_low : p.bimodal_high;
        const double u = unit_uniform(hash_combine(key, id));
        d[id] = bounded(centre + (2 * u - 1) * p.bimodal_spread);
      }
      break;
    case DifficultyLaw::threshold: {
      const auto ranked = hash_ranked(ids, key);
      for (std::size_t i = 0; i < ranked.size(); ++i) d[ranked[i]] = i < ranked.size() / 2 ? 0.2 : 0.8;
      break;
    }
    case DifficultyLaw::staged: {
      std::vector<std::string> rest;
      for (const auto& id : ids) {
        if (seed_pool.contains(id)) d[id] = 0.0;
        else rest.push_back(id);
      }
      const auto ranked = hash_ranked(rest, key);
      for (std::size_t i = 0; i < ranked.size(); ++i) {
        d[ranked[i]] = static_cast<int>(i) < p.staged_easy ? 0.0 : 1.0;
      }
      break;
    }
  }
  return d;
}

class SimBackend : public ChatBackend {
 public:
  SimBackend(BackendConfig config, std::shared_ptr<SyntheticWorld> world, std::string kind)
      : config_(std::move(config)), world_(std::move(world)), kind_(std::move(kind)) {}

  const BackendConfig& config() const override { return config_; }

  std::string complete(const ChatRequest& req) override {
    const Problem* p = req.context.problem;
    if (!p) throw BackendError("simulation backend needs a problem in the request context", false);
    const std::uint64_t nonce = req.context.nonce;
    if (kind_ == "student") {
      return student_attempt(*world_, *p, world_->params.mode, nonce).raw_text;
    }
    if (kind_ == "teacher") {
      return solution_text(*p, unit_uniform(hash_combine(nonce, "teacher")) < world_->params.teacher_accuracy);
    }
    if (kind_ == "reflector") {
      return solution_text(*p, unit_uniform(hash_combine(nonce, "reflector")) < world_->params.recovery);
    }
    if (kind_ == "judge") {
      if (!req.context.path) throw BackendError("simulation judge needs a path in the request context", false);
      return serialize_verdict(mock_judge(*world_, *p, *req.context.path, nonce, req.context.round));
    }
    throw BackendError("unknown simulation backend kind: " + kind_, false);
  }

 private:
  BackendConfig config_;
  std::shared_ptr<SyntheticWorld> world_;
  std::string kind_;
};

}  // namespace

std::string_view to_string(DifficultyLaw law) {
  switch (law) {
    case DifficultyLaw::uniform: return "uniform";
    case DifficultyLaw::bimodal: return "bimodal";
    case DifficultyLaw::threshold: return "threshold";
    case DifficultyLaw::staged: return "staged";
  }
  return "uniform";
}

std::string_view to_string(StudentMode mode) { return mode == StudentMode::threshold ? "threshold" : "stochastic"; }

DifficultyLaw parse_difficulty_law(std::string_view text) {
  for (auto l : {DifficultyLaw::uniform, DifficultyLaw::bimodal, DifficultyLaw::threshold, DifficultyLaw::staged})
    if (to_string(l) == text) return l;
  fail(ErrorCode::validation, "unknown difficulty law", {{"law", std::string(text)}});
}

StudentMode parse_student_mode(std::string_view text) {
  if (text == "threshold") return StudentMode::threshold;
  if (text == "stochastic") return StudentMode::stochastic;
  fail(ErrorCode::validation, "unknown student mode", {{"mode", std::string(text)}});
}

JudgeProfile JudgeProfile::named(std::string_view name) {
  if (name == "oracle") return {"oracle", 0.0, 0.0};
  if (name == "ours") return {"ours", 0.0, 0.058};
  if (name == "binary") return {"binary", 0.001, 0.146};
  fail(ErrorCode::validation, "unknown judge profile", {{"profile", std::string(name)}});
}

void WorldParams::validate() const {
  auto rate = [](double x, const char* name) {
    if (!(x >= 0.0 && x <= 1.0)) fail(ErrorCode::validation, std::string(name) + " must be in [0, 1]", {{name, x}});
  };
  if (n < 1) fail(ErrorCode::validation, "world size n must be >= 1", {{"n", n}});
  if (eval_n < 0) fail(ErrorCode::validation, "eval_n must be >= 0");
  rate(skill0, "skill0");
  rate(teacher_accuracy, "teacher_accuracy");
  rate(recovery, "recovery");
  rate(judge.false_accept, "false_accept");
  rate(judge.false_reject, "false_reject");
  rate(bimodal_low, "bimodal_low");
  rate(bimodal_high, "bimodal_high");
  rate(bimodal_spread, "bimodal_spread");
  if (!(gain > 0.0)) fail(ErrorCode::validation, "gain must be > 0", {{"gain", gain}});
  if (!(Fraction(0, 1) < seed_fraction) || Fraction(1, 1) < seed_fraction) {
    fail(ErrorCode::validation, "seed_fraction must be in (0, 1]");
  }
  if (law == DifficultyLaw::staged) {
    const auto seeded = seed_fraction.ceil_times(n);
    if (staged_easy < 0 || staged_easy > n - seeded) {
      fail(ErrorCode::validation, "staged_easy must fit in the non-seed share", {{"staged_easy", staged_easy}});
    }
    if (!(skill0 + gain < 1.0)) {
      fail(ErrorCode::validation, "staged law needs skill0 + gain < 1 so hard problems stay unreachable");
    }
  }
}

void to_json(json& j, const WorldParams& p) {
  j = {{"n", p.n},
       {"eval_n", p.eval_n},
       {"law", std::string(to_string(p.law))},
       {"seed", p.seed},
       {"skill0", p.skill0},
       {"gain", p.gain},
       {"teacher_accuracy", p.teacher_accuracy},
       {"recovery", p.recovery},
       {"judge", {{"name", p.judge.name}, {"false_accept", p.judge.false_accept}, {"false_reject", p.judge.false_reject}}},
       {"mode", std::string(to_string(p.mode))},
       {"bimodal", {{"low", p.bimodal_low}, {"high", p.bimodal_high}, {"spread", p.bimodal_spread}}},
       {"seed_fraction", p.seed_fraction.str()},
       {"staged_easy", p.staged_easy}};
}

void from_json(const json& j, WorldParams& p) {
  p = WorldParams{};
  p.n = j.value("n", p.n);
  p.eval_n = j.value("eval_n", p.eval_n);
  if (j.contains("law")) p.law = parse_difficulty_law(j["law"].get<std::string>());
  p.seed = j.value("seed", p.seed);
  p.skill0 = j.value("skill0", p.skill0);
  p.gain = j.value("gain", p.gain);
  p.teacher_accuracy = j.value("teacher_accuracy", p.teacher_accuracy);
  p.recovery = j.value("recovery", p.recovery);
  if (j.contains("judge")) {
    const auto& jj = j["judge"];
    if (jj.is_string()) {
      p.judge = JudgeProfile::named(jj.get<std::string>());
    } else {
      p.judge.name = jj.value("name", std::string("custom"));
      p.judge.false_accept = jj.value("false_accept", 0.0);
      p.judge.false_reject = jj.value("false_reject", 0.0);
    }
  }
  if (j.contains("mode")) p.mode = parse_student_mode(j["mode"].get<std::string>());
  if (j.contains("bimodal")) {
    p.bimodal_low = j["bimodal"].value("low", p.bimodal_low);
    p.bimodal_high = j["bimodal"].value("high", p.bimodal_high);
    p.bimodal_spread = j["bimodal"].value("spread", p.bimodal_spread);
  }
  if (j.contains("seed_fraction")) {
    const auto& f = j["seed_fraction"];
    p.seed_fraction = Fraction::parse(f.is_string() ? f.get<std::string>() : f.dump());
  }
  p.staged_easy = j.value("staged_easy", p.staged_easy);
}

SyntheticWorld make_world(const WorldParams& params) {
  params.validate();
  SyntheticWorld w;
  w.params = params;
  w.skill = params.skill0;
  std::vector<std::string> ids, eval_ids;
  for (int i = 0; i < params.n; ++i) ids.push_back(make_id('s', i));
  for (int i = 0; i < params.eval_n; ++i) eval_ids.push_back(make_id('v', i));
  std::set<std::string> seed_pool;
  if (params.law == DifficultyLaw::staged) seed_pool = select_seed_pool(ids, params.seed_fraction, params.seed);
  w.difficulty = draw_difficulties(ids, params, params.law, seed_pool);
  const auto eval_law = params.law == DifficultyLaw::staged ? DifficultyLaw::uniform : params.law;
  for (auto& [id, d] : draw_difficulties(eval_ids, params, eval_law, {})) w.difficulty[id] = d;
  for (const auto& id : ids) w.problems.push_back(make_problem(id, params.seed, w.difficulty.at(id)));
  for (const auto& id : eval_ids) w.eval_problems.push_back(make_problem(id, params.seed, w.difficulty.at(id)));
  return w;
}

double success_probability(double skill, double difficulty, StudentMode mode) {
  if (mode == StudentMode::threshold) return skill >= difficulty ? 1.0 : 0.0;
  return bounded(skill - difficulty + 0.5);
}

ReasoningPath student_attempt(const SyntheticWorld& world, const Problem& problem, StudentMode mode,
                              std::uint64_t nonce, Stage stage) {
  const auto it = world.difficulty.find(problem.id);
  if (it == world.difficulty.end()) fail(ErrorCode::validation, "problem is not part of the world", {{"id", problem.id}});
  const double p = success_probability(world.skill, it->second, mode);
  const bool correct = mode == StudentMode::threshold ? p >= 1.0 : unit_uniform(hash_combine(nonce, "student")) < p;
  return make_path(problem.id, solution_text(problem, correct), Producer::student, stage);
}

void training_update(SyntheticWorld& world, const std::set<std::string>& trained_ids) {
  std::vector<std::string> unknown;
  std::int64_t fresh = 0;
  for (const auto& id : trained_ids) {
    if (!world.difficulty.contains(id) || id.empty() || id[0] != 's') unknown.push_back(id);
    else fresh += !world.trained.contains(id);
  }
  if (!unknown.empty()) fail(ErrorCode::validation, "training ids outside the corpus", {{"ids", unknown}});
  world.trained.insert(trained_ids.begin(), trained_ids.end());
  world.skill = std::min(1.0, world.skill + world.params.gain * static_cast<double>(fresh) / world.params.n);
}

bool truly_correct(const Problem& problem, const ReasoningPath& path) {
  return path.has_answer && canonicalize_answer(path.final_answer) == canonicalize_answer(problem.ground_answer);
}

OrmVerdict mock_judge(const SyntheticWorld& world, const Problem& problem, const ReasoningPath& path,
                      std::uint64_t nonce, int round) {
  const bool truth = truly_correct(problem, path);
  const double u = unit_uniform(hash_combine(nonce, "sim-judge"));
  const auto& profile = world.params.judge;
  const bool says_correct = truth ? !(u < profile.false_reject) : u < profile.false_accept;
  OrmVerdict v;
  v.problem_id = problem.id;
  v.round = round;
  v.judge_tag = "sim:" + profile.name;
  if (says_correct) {
    v.status = Status::correct;
    v.improvement_suggestion = "The solution is correct.";
  } else {
    const auto& t = pick_template(unit_uniform(hash_combine(nonce, "sim-taxonomy")));
    v.status = Status::wrong;
    v.error_step = t.step;
    v.error_analysis = t.analysis;
    v.improvement_suggestion = t.suggestion;
  }
  return v;
}

BackendResolver sim_resolver(std::shared_ptr<SyntheticWorld> world) {
  return [world](const std::string& role, const BackendConfig& cfg) -> std::shared_ptr<ChatBackend> {
    (void)role;
    if (!cfg.endpoint.starts_with("sim://")) return make_backend(cfg);
    std::string kind = cfg.endpoint.substr(6);
    kind = kind.substr(0, kind.find_first_of("/?"));
    if (kind != "teacher" && kind != "student" && kind != "judge" && kind != "reflector") {
      fail(ErrorCode::validation, "unknown simulation backend", {{"endpoint", cfg.endpoint}});
    }
    return std::make_shared<SimBackend>(cfg, world, kind);
  };
}

void SimTrainer::train(const HookContext& ctx) { training_update(*world_, ctx.ledger->sft_ids); }

json SimTrainer::state() const { return {{"skill", world_->skill}, {"trained", world_->trained.size()}}; }

void SimTrainer::restore(const json& state, const EvolutionLedger& ledger) {
  (void)state;
  world_->trained = ledger.sft_ids;
  world_->skill = std::min(1.0, world_->params.skill0 + world_->params.gain *
                                                            static_cast<double>(world_->trained.size()) /
                                                            world_->params.n);
}

std::vector<Violation> stage_violations(const EvolutionLedger& ledger) {
  std::vector<Violation> out;
  EvolutionLedger prefix;
  for (const auto& e : ledger.history) {
    try {
      apply_event(prefix, e);
    } catch (const Error& err) {
      out.push_back({"replay", e.stage + ": " + err.what()});
      return out;
    }
    if (e.event != kEventStageCommit) continue;
    for (auto v : check_invariants(prefix)) {
      v.detail = e.stage + ": " + v.detail;
      out.push_back(std::move(v));
    }
  }
  return out;
}

RunConfig simulation_config(const SyntheticWorld& world, const SimRunOptions& options) {
  const fs::path inputs = options.run_dir / "inputs";
  fs::create_directories(inputs);
  write_corpus(inputs / "corpus.jsonl", world.problems);
  if (!world.eval_problems.empty()) write_corpus(inputs / "eval.jsonl", world.eval_problems);

  auto backend_for = [&](const std::string& kind) {
    BackendConfig c;
    c.tag = "sim-" + kind;
    c.endpoint = "sim://" + kind;
    c.model_name = "sim-" + kind;
    c.concurrency_limit = options.concurrency;
    c.retry.max_attempts = 1;
    c.retry.base_backoff = std::chrono::milliseconds(0);
    return c;
  };
  RunConfig cfg;
  cfg.corpus_path = inputs / "corpus.jsonl";
  cfg.run_dir = options.run_dir;
  cfg.rounds = options.rounds;
  cfg.seed_fraction = world.params.seed_fraction;
  cfg.rng_seed = world.params.seed;
  cfg.teacher = backend_for("teacher");
  cfg.student = backend_for("student");
  cfg.judge = backend_for("judge");
  cfg.reflector = backend_for("reflector");
  if (!world.eval_problems.empty()) cfg.eval_corpus_path = inputs / "eval.jsonl";
  cfg.trainer_hook = "simlab";
  cfg.reflection_schedule = options.reflection_schedule;
  cfg.max_attempts = options.max_attempts;
  return cfg;
}

EngineOptions simulation_engine_options(std::shared_ptr<SyntheticWorld> live, const SimRunOptions& options) {
  EngineOptions eo;
  eo.resolver = sim_resolver(live);
  eo.hook = std::make_shared<SimTrainer>(live);
  eo.progress = options.progress;
  return eo;
}

SimulationResult run_simulation(const SyntheticWorld& world, const SimRunOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig cfg = simulation_config(world, options);
  auto live = std::make_shared<SyntheticWorld>(world);
  const EngineOptions eo = simulation_engine_options(live, options);

  SimulationResult r;
  {
    auto engine = Engine::init(cfg, eo);
    r.manifest = engine.run_all();
    r.ledger = engine.ledger();
  }
  r.reports = options.emit_report ? emit_report(options.run_dir).rounds : round_reports(options.run_dir);
  r.final_skill = live->skill;
  std::map<std::string, const Problem*> by_id;
  for (const auto& p : world.problems) by_id[p.id] = &p;
  for (const auto& rec : r.ledger.sft_records) {
    ++r.sft_records;
    r.truly_wrong_records += !truly_correct(*by_id.at(rec.problem_id), rec.path);
  }
  r.violations = stage_violations(r.ledger);
  r.elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
  return r;
}

}  // namespace evoforge
