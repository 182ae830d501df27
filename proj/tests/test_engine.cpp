#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "evoforge/digest.hpp"
#include "evoforge/engine.hpp"
#include "evoforge/error.hpp"
#include "evoforge/mocks.hpp"

using namespace evoforge;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("evoforge_engine_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

std::vector<Problem> make_corpus(int n, const std::string& prefix = "q") {
  std::vector<Problem> out;
  for (int i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%s%04d", prefix.c_str(), i);
    out.push_back({id, "Compute item " + std::to_string(i) + ".", {}, std::to_string(i * 3 + 1), {}});
  }
  return out;
}

json backend(const std::string& tag, const std::string& endpoint) {
  return {{"tag", tag}, {"endpoint", endpoint}, {"model_name", tag}, {"concurrency_limit", 4},
          {"retry", {{"max_attempts", 2}, {"base_backoff_ms", 0}, {"backoff_factor", 2.0}}}};
}

json base_config(const fs::path& dir, int n, int rounds = 2) {
  write_corpus(dir / "corpus.jsonl", make_corpus(n));
  write_corpus(dir / "eval.jsonl", make_corpus(20, "e"));
  return {{"corpus_path", (dir / "corpus.jsonl").string()},
          {"run_dir", (dir / "run").string()},
          {"rounds", rounds},
          {"seed_fraction", "1/4"},
          {"rng_seed", 11},
          {"backends",
           {{"teacher", backend("teacher", "mock://solver?accuracy=1")},
            {"student", backend("student-0", "mock://solver?accuracy=0.5")},
            {"judge", backend("judge", "mock://oracle-judge")},
            {"reflector", backend("reflector", "mock://reflector?recovery=0.5")}}},
          {"eval", {{"corpus_path", (dir / "eval.jsonl").string()}}},
          {"trainer_hook", "noop"}};
}

RunConfig config_at(const json& j, const fs::path& run_dir) {
  auto c = RunConfig::from_json(j);
  c.run_dir = run_dir;
  return c;
}

std::string file_bytes(const fs::path& p) { return read_file(p); }

/// Student that answers correctly exactly for the listed ids.
EngineOptions scripted_student(std::set<std::string> correct_ids) {
  EngineOptions opt;
  opt.resolver = [ids = std::move(correct_ids)](const std::string& role,
                                                 const BackendConfig& cfg) -> std::shared_ptr<ChatBackend> {
    if (role != "student") return make_backend(cfg);
    return std::make_shared<FunctionBackend>(cfg, [ids](const ChatRequest& r) {
      const Problem& p = *r.context.problem;
      const bool ok = ids.contains(p.id);
      return scripted_solution(p, ok ? p.ground_answer : wrong_answer_for(p), ok);
    });
  };
  return opt;
}

}  // namespace

TEST(RunConfigTest, RoundTripAndValidation) {
  TempDir t;
  const json j = base_config(t.path(), 10);
  const auto c = RunConfig::from_json(j);
  const auto back = RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.digest(), c.digest());

  auto moved = c;
  moved.run_dir = "/elsewhere";
  EXPECT_EQ(moved.digest(), c.digest());

  for (auto mutate : std::vector<std::function<void(json&)>>{
           [](json& x) { x["rounds"] = -1; }, [](json& x) { x["seed_fraction"] = "0"; },
           [](json& x) { x["seed_fraction"] = "3/2"; }, [](json& x) { x["bogus"] = 1; },
           [](json& x) { x["backends"].erase("judge"); }, [](json& x) { x["reflection_schedule"] = "sometimes"; },
           [](json& x) { x["backends"]["student"]["endpoint"] = "gopher://x"; }}) {
    json bad = j;
    mutate(bad);
    EXPECT_THROW(RunConfig::from_json(bad), Error);
  }
}

TEST(StagePlan, SchedulesAndRoundCounts) {
  TempDir t;
  auto c = RunConfig::from_json(base_config(t.path(), 4, 3));
  EXPECT_EQ(stage_plan(c), (std::vector<std::string>{"seed", "round-1", "round-2", "round-3", "reflection-3", "final"}));
  c.reflection_schedule = ReflectionSchedule::per_round;
  EXPECT_EQ(stage_plan(c), (std::vector<std::string>{"seed", "round-1", "reflection-1", "round-2", "reflection-2",
                                                     "round-3", "reflection-3", "final"}));
  c.rounds = 0;
  EXPECT_EQ(stage_plan(c), (std::vector<std::string>{"seed", "reflection-0", "final"}));
}

TEST(SeedStage, PerfectTeacherFillsSftWithSeedPool) {
  TempDir t;
  auto engine = Engine::init(config_at(base_config(t.path(), 40), t.path() / "run"));
  const auto pool = engine.ledger().seed_pool;
  ASSERT_EQ(pool.size(), 10u);
  engine.run_seed_stage();
  EXPECT_EQ(engine.ledger().sft_ids, pool);
  EXPECT_TRUE(engine.ledger().seed_pool.empty());
  EXPECT_EQ(engine.ledger().remain_ids.size(), 30u);
  EXPECT_EQ(read_jsonl(t.path() / "run" / "stage_seed" / "sft.jsonl").size(), 10u);
}

TEST(SeedStage, ImperfectTeacherDiscardsFailures) {
  TempDir t;
  json j = base_config(t.path(), 100);
  j["seed_fraction"] = "1";
  j["backends"]["teacher"]["endpoint"] = "mock://solver?accuracy=0.8";
  auto engine = Engine::init(config_at(j, t.path() / "run"));
  engine.run_seed_stage();
  const auto& l = engine.ledger();
  // Oracle: recount truth from the emitted verdict file.
  int truly_correct = 0;
  std::map<std::string, std::string> ground;
  for (const auto& p : make_corpus(100)) ground[p.id] = p.ground_answer;
  for (const auto& rec : read_jsonl(t.path() / "run" / "stage_seed" / "verdicts.jsonl")) {
    truly_correct += rec["path"]["final_answer"] == ground[rec["problem_id"]];
  }
  EXPECT_EQ(static_cast<int>(l.sft_ids.size()), truly_correct);
  EXPECT_GT(truly_correct, 65);
  EXPECT_LT(truly_correct, 95);
  EXPECT_EQ(l.sft_ids.size() + l.remain_ids.size(), 100u);
  EXPECT_TRUE(l.incorrect_pool.empty());
}

TEST(RoundStage, StudentSolvesSubset) {
  TempDir t;
  json j = base_config(t.path(), 4, 1);
  j["seed_fraction"] = "1/4";
  auto cfg = config_at(j, t.path() / "run");
  std::vector<std::string> ids;
  for (const auto& p : make_corpus(4)) ids.push_back(p.id);
  const auto seed = select_seed_pool(ids, Fraction(1, 4), 11);
  std::vector<std::string> rest;
  for (const auto& id : ids)
    if (!seed.contains(id)) rest.push_back(id);
  ASSERT_EQ(rest.size(), 3u);  // {a, b, c}
  auto engine = Engine::init(cfg, scripted_student({rest[0], rest[2]}));
  engine.run_seed_stage();
  engine.run_evolve_round();
  EXPECT_EQ(engine.ledger().remain_ids, std::set<std::string>{rest[1]});
  ASSERT_EQ(engine.ledger().incorrect_pool.size(), 1u);
  EXPECT_EQ(engine.ledger().incorrect_pool[0].path.problem_id, rest[1]);
}

TEST(ReflectionStage, ZeroRoundsReflectsEmptyPool) {
  TempDir t;
  auto engine = Engine::init(config_at(base_config(t.path(), 12, 0), t.path() / "run"));
  engine.run_seed_stage();
  EXPECT_EQ(engine.next_stage(), "reflection-0");
  const auto before = engine.ledger().sft_ids;
  engine.run_reflection_stage();
  EXPECT_EQ(engine.ledger().sft_ids, before);
  EXPECT_EQ(engine.next_stage(), "final");
}

TEST(ReflectionStage, HalfOfFortyIncorrectRecovered) {
  TempDir t;
  json j = base_config(t.path(), 50, 1);
  j["seed_fraction"] = "1/5";
  auto opt = scripted_student({});
  auto student_resolver = opt.resolver;
  // Reflector fixes exactly the even-numbered problems.
  opt.resolver = [student_resolver](const std::string& role, const BackendConfig& cfg) -> std::shared_ptr<ChatBackend> {
    if (role != "reflector") return student_resolver(role, cfg);
    return std::make_shared<FunctionBackend>(cfg, [](const ChatRequest& r) {
      const Problem& p = *r.context.problem;
      const bool ok = std::stoi(p.id.substr(1)) % 2 == 0;
      return scripted_solution(p, ok ? p.ground_answer : wrong_answer_for(p), ok);
    });
  };
  auto engine = Engine::init(config_at(j, t.path() / "run"), opt);
  engine.run_seed_stage();
  engine.run_evolve_round();
  const auto candidates = reflection_candidates(engine.ledger());
  ASSERT_EQ(candidates.size(), 40u);
  int even = 0;
  for (const auto& c : candidates) even += std::stoi(c.path.problem_id.substr(1)) % 2 == 0;
  const auto sft_before = engine.ledger().sft_ids.size();
  engine.run_reflection_stage();
  EXPECT_EQ(engine.ledger().sft_ids.size() - sft_before, static_cast<std::size_t>(even));
  EXPECT_EQ(engine.ledger().reflected_ids.size(), 40u);
  const json m = engine.finalize().body;
  EXPECT_EQ(m["counts"]["by_producer"]["reflector"], even);
}

TEST(Finalize, ManifestConsistentAndRunSealed) {
  TempDir t;
  auto engine = Engine::init(config_at(base_config(t.path(), 60), t.path() / "run"));
  const auto manifest = engine.run_all();
  const fs::path run = t.path() / "run";
  EXPECT_EQ(manifest.body["final"]["sft_records"], engine.ledger().sft_records.size());
  EXPECT_EQ(manifest.digest, sha256_file(run / "manifest.json"));
  EXPECT_EQ(manifest.body["final"]["sft_sha256"], sha256_file(run / "stage_final" / "sft.jsonl"));
  EXPECT_EQ(manifest.body["stages"].size(), 4u);
  for (const auto& st : manifest.body["stages"]) {
    EXPECT_EQ(st["sft_sha256"], sha256_file(run / ("stage_" + st["stage"].get<std::string>()) / "sft.jsonl"));
  }
  EXPECT_TRUE(engine.sealed());
  try {
    engine.run_evolve_round();
    FAIL() << "sealed run accepted a round";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::stage_order);
  }
  EXPECT_TRUE(check_invariants(engine.ledger()).empty());
}

TEST(StageOrder, RoundBeforeSeedRejected) {
  TempDir t;
  auto engine = Engine::init(config_at(base_config(t.path(), 8), t.path() / "run"));
  try {
    engine.run_evolve_round();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::stage_order);
    EXPECT_EQ(e.exit_code(), 1);
  }
  EXPECT_THROW(engine.run_stage("reflection-2"), Error);
  EXPECT_THROW(engine.finalize(), Error);
  EXPECT_NO_THROW(engine.run_stage("seed"));
}

TEST(Resume, InterruptAtEveryBoundaryIsByteIdentical) {
  TempDir t;
  const json j = base_config(t.path(), 80);
  auto reference = Engine::init(config_at(j, t.path() / "ref"));
  const auto ref = reference.run_all();
  const std::string ref_sft = file_bytes(t.path() / "ref" / "stage_final" / "sft.jsonl");
  const auto plan = stage_plan(reference.config());

  for (std::size_t stop = 0; stop + 1 < plan.size(); ++stop) {
    const fs::path dir = t.path() / ("cut" + std::to_string(stop));
    {
      auto e = Engine::init(config_at(j, dir));
      for (std::size_t i = 0; i <= stop; ++i) e.run_stage(plan[i]);
    }
    auto resumed = Engine::open(dir);
    EXPECT_EQ(resumed.checkpoint().stage, plan[stop]);
    const auto m = resumed.run_all();
    EXPECT_EQ(m.digest, ref.digest) << "stopped after " << plan[stop];
    EXPECT_EQ(file_bytes(dir / "stage_final" / "sft.jsonl"), ref_sft);
  }
}

TEST(Resume, CrashMidCommitRedoesStage) {
  TempDir t;
  const json j = base_config(t.path(), 80);
  auto reference = Engine::init(config_at(j, t.path() / "ref"));
  const auto ref = reference.run_all();

  for (const std::string point : {"before-log", "after-log"}) {
    for (const std::string stage : {"seed", "round-2", "reflection-2", "final"}) {
      const fs::path dir = t.path() / ("crash-" + point + "-" + stage);
      EngineOptions opt;
      opt.fault = [&](const std::string& p, const std::string& s) {
        if (p == point && s == stage) throw std::runtime_error("simulated crash");
      };
      {
        auto e = Engine::init(config_at(j, dir), opt);
        EXPECT_THROW(e.run_all(), std::runtime_error);
      }
      auto resumed = Engine::open(dir);
      EXPECT_EQ(resumed.next_stage(), stage);
      EXPECT_EQ(fs::file_size(dir / "ledger.log"), resumed.checkpoint().log.offset);
      EXPECT_EQ(resumed.run_all().digest, ref.digest) << point << " " << stage;
    }
  }
}

TEST(Resume, TamperedLogLineReportsOffset) {
  TempDir t;
  const fs::path dir = t.path() / "run";
  {
    auto e = Engine::init(config_at(base_config(t.path(), 30), dir));
    e.run_seed_stage();
    e.run_evolve_round();
  }
  std::string log = file_bytes(dir / "ledger.log");
  // Flip a verdict status on a commit line.
  const auto commit = log.find("\"event\":\"commit\"");
  ASSERT_NE(commit, std::string::npos);
  const auto line_start = log.rfind('\n', commit) + 1;
  auto status = log.find("\"status\":\"WRONG\"", line_start);
  if (status == std::string::npos || status > log.find('\n', line_start)) status = log.find("\"status\":\"CORRECT\"", line_start);
  log.replace(log.find(':', status) + 1, 1, "\"X");
  write_file_atomic(dir / "ledger.log", log);
  try {
    Engine::open(dir);
    FAIL() << "tampered log accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::corruption);
    EXPECT_EQ(e.exit_code(), 2);
    EXPECT_EQ(e.detail()["offset"], line_start);
    EXPECT_NE(std::string(e.what()).find(std::to_string(line_start)), std::string::npos);
  }
}

TEST(Resume, TamperedEmittedFileIsCorruption) {
  TempDir t;
  const fs::path dir = t.path() / "run";
  {
    auto e = Engine::init(config_at(base_config(t.path(), 30), dir));
    e.run_seed_stage();
  }
  std::ofstream(dir / "stage_seed" / "sft.jsonl", std::ios::app) << "{}\n";
  try {
    Engine::open(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::corruption);
    EXPECT_EQ(e.detail()["file"], "stage_seed/sft.jsonl");
  }
}

TEST(Resume, ChangedRoundsIsConfigDrift) {
  TempDir t;
  const json j = base_config(t.path(), 20);
  const fs::path dir = t.path() / "run";
  { Engine::init(config_at(j, dir)).run_seed_stage(); }
  json changed = j;
  changed["rounds"] = 5;
  const auto live = config_at(changed, dir);
  try {
    Engine::open(dir, {}, &live);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::config_drift);
    EXPECT_EQ(e.detail()["keys"], json::array({"rounds"}));
  }
  const auto same = config_at(j, dir);
  EXPECT_NO_THROW(Engine::open(dir, {}, &same));
}

TEST(Lock, SecondOwnerFailsFast) {
  TempDir t;
  const fs::path dir = t.path() / "run";
  auto first = Engine::init(config_at(base_config(t.path(), 10), dir));
  try {
    Engine::open(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::locked);
    EXPECT_EQ(e.exit_code(), 2);
  }
}

TEST(TrainerHook, FailureLeavesLedgerUntouched) {
  TempDir t;
  json j = base_config(t.path(), 20);
  j["trainer_hook"] = "test -n {sft_path} && exit 3";
  const fs::path dir = t.path() / "run";
  {
    auto e = Engine::init(config_at(j, dir));
    const auto digest = e.ledger().state_digest();
    const auto log_size = fs::file_size(dir / "ledger.log");
    try {
      e.run_seed_stage();
      FAIL();
    } catch (const Error& err) {
      EXPECT_EQ(err.code(), ErrorCode::hook_failure);
      EXPECT_EQ(err.detail()["exit_status"], 3);
    }
    EXPECT_EQ(e.ledger().state_digest(), digest);
    EXPECT_EQ(fs::file_size(dir / "ledger.log"), log_size);
    EXPECT_EQ(e.next_stage(), "seed");
  }
  EXPECT_EQ(Engine::open(dir).next_stage(), "seed");
}

TEST(TrainerHook, ShellHookSwapsStudentBackend) {
  TempDir t;
  json j = base_config(t.path(), 40, 1);
  std::ofstream(t.path() / "student1.json") << backend("student-1", "mock://solver?accuracy=1").dump();
  j["trainer_hook"] = "echo {stage} >> " + (t.path() / "stages.txt").string() + " && cp " +
                      (t.path() / "student1.json").string() + " \"$(dirname {sft_path})/backend.json\"";
  auto e = Engine::init(config_at(j, t.path() / "run"));
  e.run_seed_stage();
  EXPECT_EQ(e.checkpoint().student.tag, "student-1");
  e.run_evolve_round();
  EXPECT_TRUE(e.ledger().remain_ids.empty());
  e.run_reflection_stage();
  EXPECT_EQ(file_bytes(t.path() / "stages.txt"), "seed\nround-1\nreflection-1\n");
}

TEST(ShellHookTest, SlotsAreQuoted) {
  ShellHook hook("train --data {sft_path} --tag {stage}");
  HookContext ctx{"round-1", "/r", "/r/stage_round-1", "/r/it's/sft.jsonl", nullptr};
  EXPECT_EQ(hook.command_for(ctx), "train --data '/r/it'\\''s/sft.jsonl' --tag 'round-1'");
}

TEST(Failures, JudgeFailuresQuarantinedAndRetried) {
  TempDir t;
  json j = base_config(t.path(), 20, 1);
  EngineOptions opt;
  opt.resolver = [](const std::string& role, const BackendConfig& cfg) -> std::shared_ptr<ChatBackend> {
    if (role != "judge") return make_backend(cfg);
    auto oracle = make_backend(cfg);
    return std::make_shared<FunctionBackend>(cfg, [oracle](const ChatRequest& r) {
      if (r.context.problem->id == "q0003") return std::string("no verdict here");
      return oracle->complete(r);
    });
  };
  auto e = Engine::init(config_at(j, t.path() / "run"), opt);
  e.run_seed_stage();
  e.run_evolve_round();
  const auto q = read_jsonl(t.path() / "run" / "stage_round-1" / "quarantine.jsonl");
  EXPECT_TRUE(e.ledger().remain_ids.contains("q0003"));
  EXPECT_FALSE(e.ledger().attempts.contains("q0003"));
  ASSERT_EQ(q.size(), 1u);
  EXPECT_EQ(q[0]["problem_id"], "q0003");
  EXPECT_EQ(q[0]["failure"], "judge-failure");
  EXPECT_EQ(q[0]["attempts"], 2);
}

TEST(Failures, UnreachableStudentIsTransportExhaustion) {
  TempDir t;
  json j = base_config(t.path(), 12, 1);
  j["backends"]["student"] = backend("student", "http://127.0.0.1:9/v1/chat/completions");
  j["backends"]["student"]["timeout_ms"] = 500;
  j.erase("eval");
  auto e = Engine::init(config_at(j, t.path() / "run"));
  e.run_seed_stage();
  const auto digest = e.ledger().state_digest();
  try {
    e.run_evolve_round();
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::transport);
    EXPECT_EQ(err.exit_code(), 2);
  }
  EXPECT_EQ(e.ledger().state_digest(), digest);
}

TEST(Eval, HeldOutPoolRecordedEveryStage) {
  TempDir t;
  json j = base_config(t.path(), 30, 2);
  j["eval"]["size"] = 12;
  auto e = Engine::init(config_at(j, t.path() / "run"));
  e.run_all();
  const auto& outcomes = e.ledger().eval_outcomes;
  ASSERT_EQ(outcomes.size(), 4u);  // seed, round-1, round-2, reflection-2
  for (const auto& [idx, row] : outcomes) EXPECT_EQ(row.size(), 12u) << idx;
  const auto tr = transitions(e.ledger(), 0, 1);
  EXPECT_EQ(tr.counts.joint(), 12);
}

TEST(Eval, OverlappingEvalPoolRejected) {
  TempDir t;
  json j = base_config(t.path(), 10);
  j["eval"]["corpus_path"] = j["corpus_path"];
  EXPECT_THROW(Engine::init(config_at(j, t.path() / "run")), Error);
}

TEST(PerRound, ReflectionAfterEachRound) {
  TempDir t;
  json j = base_config(t.path(), 60, 2);
  j["reflection_schedule"] = "per_round";
  auto e = Engine::init(config_at(j, t.path() / "run"));
  const auto m = e.run_all();
  std::vector<std::string> labels;
  for (const auto& st : m.body["stages"]) labels.push_back(st["stage"]);
  EXPECT_EQ(labels, (std::vector<std::string>{"seed", "round-1", "reflection-1", "round-2", "reflection-2"}));
  EXPECT_TRUE(check_invariants(e.ledger()).empty());
  std::map<std::string, int> reflected_per_id;
  for (const auto& ev : e.ledger().history)
    if (ev.event == kEventReflection) ++reflected_per_id[ev.problem_id];
  for (const auto& [id, n] : reflected_per_id) EXPECT_EQ(n, 1) << id;
}

TEST(EmitSft, DeterministicOrderAndRejections) {
  TempDir t;
  std::map<std::string, Problem> corpus;
  for (const auto& p : make_corpus(3)) corpus[p.id] = p;
  EvolutionLedger empty;
  EXPECT_EQ(emit_sft_dataset(empty, corpus, t.path() / "e.jsonl", t.path()), sha256_hex(""));

  EvolutionLedger l;
  auto rec = [&](const std::string& id, Stage st, Producer pr) {
    auto path = make_path(id, "Step 1: x.\nThe answer to this problem is 1.", pr, st);
    l.sft_records.push_back({id, path, OrmVerdict{id, Status::correct, "", "", "", "j", 0}});
  };
  rec("q0002", Stage::evolve(1), Producer::student);
  rec("q0001", Stage::reflection(1), Producer::reflector);
  rec("q0000", Stage::seed(), Producer::teacher);
  const auto d1 = emit_sft_dataset(l, corpus, t.path() / "a.jsonl", t.path());
  std::reverse(l.sft_records.begin(), l.sft_records.end());
  EXPECT_EQ(emit_sft_dataset(l, corpus, t.path() / "b.jsonl", t.path()), d1);
  const auto lines = read_jsonl(t.path() / "a.jsonl");
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0]["id"], "q0000");
  EXPECT_EQ(lines[1]["id"], "q0002");
  EXPECT_EQ(lines[2]["id"], "q0001");
  EXPECT_EQ(lines[0]["producer"], "teacher");
  EXPECT_EQ(lines[2]["stage"], "reflection-1");
  EXPECT_EQ(lines[0]["messages"][0]["role"], "user");
  EXPECT_EQ(lines[0]["messages"][1]["content"], "Step 1: x.\nThe answer to this problem is 1.");

  corpus["q0001"].images = {"missing/figure.png"};
  try {
    emit_sft_dataset(l, corpus, t.path() / "c.jsonl", t.path());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.detail()["id"], "q0001");
  }
}

TEST(DryRun, PlanTouchesNothing) {
  TempDir t;
  const auto c = config_at(base_config(t.path(), 40), t.path() / "run");
  const auto plan = dry_run_plan(c);
  EXPECT_EQ(plan["seed_pool"], 10);
  EXPECT_EQ(plan["remain"], 30);
  EXPECT_EQ(plan["eval_pool"], 20);
  EXPECT_FALSE(fs::exists(t.path() / "run"));
}

TEST(Init, RefusesInitializedDirectory) {
  TempDir t;
  const auto c = config_at(base_config(t.path(), 10), t.path() / "run");
  { Engine::init(c); }
  EXPECT_THROW(Engine::init(c), Error);
}
