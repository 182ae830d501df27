#include "evoforge/engine.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>

#include "evoforge/digest.hpp"
#include "evoforge/error.hpp"

namespace evoforge {
namespace {

constexpr const char* kConfigFile = "config.json";
constexpr const char* kLogFile = "ledger.log";
constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kCheckpointFile = "checkpoint.json";

fs::path stage_dir(const fs::path& run_dir, const std::string& label) { return run_dir / ("stage_" + label); }

std::string rel(const std::string& label, const std::string& file) { return "stage_" + label + "/" + file; }

fs::path absolute_from(const fs::path& p, const fs::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return fs::weakly_canonical(base / p);
}

BackendConfig backend_from(const json& j, const std::string& role) {
  try {
    return j.get<BackendConfig>();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& ex) {
    fail(ErrorCode::validation, "invalid backend config for role " + role + ": " + ex.what());
  }
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out += c;
  }
  return out + "'";
}

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = text.find(from, pos)) != std::string::npos; pos += to.size()) {
    text.replace(pos, from.size(), to);
  }
  return text;
}

json accuracy_json(std::int64_t correct, std::int64_t judged) {
  if (judged == 0) return {{"n_judged", 0}, {"n_correct", 0}, {"accuracy", nullptr}, {"accuracy_decimal", nullptr}};
  const Fraction f(correct, judged);
  return {{"n_judged", judged}, {"n_correct", correct}, {"accuracy", f.str()}, {"accuracy_decimal", f.decimal(4)}};
}

OrmVerdict no_answer_verdict(const ReasoningPath& path, int round) {
  OrmVerdict v;
  v.problem_id = path.problem_id;
  v.status = Status::wrong;
  v.error_step = "Step " + std::to_string(std::max<std::size_t>(1, path.steps.size()));
  v.error_analysis = "The solution does not end with the required final answer sentence.";
  v.judge_tag = "engine:no-answer";
  v.round = round;
  return v;
}

json quarantine_record(const std::string& id, const char* phase, const JobOutcome& job) {
  return {{"problem_id", id},
          {"phase", phase},
          {"failure", std::string(to_string(job.failure))},
          {"detail", job.detail},
          {"attempts", job.attempts}};
}

// All-transport failure of a non-empty batch means the endpoint is down;
// committing an empty stage would silently skip work.
template <typename Outcomes>
void require_reachable(const Outcomes& outcomes, const std::string& role) {
  if (outcomes.empty()) return;
  for (const auto& o : outcomes) {
    if (o.job.failure != FailureKind::transport) return;
  }
  fail(ErrorCode::transport, "every " + role + " request failed after retries",
       {{"role", role}, {"jobs", outcomes.size()}, {"last_error", outcomes.back().job.detail}});
}

struct Judged {
  std::vector<std::pair<ReasoningPath, OrmVerdict>> pairs;
  std::vector<json> verdict_records;
  std::vector<json> quarantine;
  std::int64_t generated = 0;
  std::int64_t correct = 0;
};

}  // namespace

std::string_view to_string(ReflectionSchedule s) {
  return s == ReflectionSchedule::per_round ? "per_round" : "after_all_rounds";
}

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  if (corpus_path.empty()) fail(ErrorCode::validation, "corpus_path is required");
  if (run_dir.empty()) fail(ErrorCode::validation, "run_dir is required");
  if (rounds < 0) fail(ErrorCode::validation, "rounds must be >= 0", {{"rounds", rounds}});
  if (!(Fraction(0, 1) < seed_fraction) || Fraction(1, 1) < seed_fraction) {
    fail(ErrorCode::validation, "seed_fraction must be in (0, 1]", {{"seed_fraction", seed_fraction.str()}});
  }
  if (max_attempts < 0) fail(ErrorCode::validation, "max_attempts must be >= 0");
  if (eval_size < 0) fail(ErrorCode::validation, "eval.size must be >= 0");
  if (trainer_hook.empty()) fail(ErrorCode::validation, "trainer_hook must be \"noop\" or a command template");
  teacher.validate();
  student.validate();
  judge.validate();
  reflector.validate();
  if (eval_judge) eval_judge->validate();
}

RunConfig RunConfig::from_json(const json& j, const fs::path& base_dir) {
  static const std::set<std::string> known = {"corpus_path", "run_dir", "rounds", "seed_fraction", "rng_seed",
                                              "backends", "eval", "trainer_hook", "reflection_schedule",
                                              "max_attempts"};
  if (!j.is_object()) fail(ErrorCode::validation, "run config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) fail(ErrorCode::validation, "unknown run config key", {{"key", key}});
  }
  RunConfig c;
  try {
    c.corpus_path = absolute_from(j.at("corpus_path").get<std::string>(), base_dir);
    c.run_dir = absolute_from(j.value("run_dir", std::string()), base_dir);
    c.rounds = j.value("rounds", 2);
    if (j.contains("seed_fraction")) {
      const auto& f = j["seed_fraction"];
      c.seed_fraction = Fraction::parse(f.is_string() ? f.get<std::string>() : f.dump());
    }
    c.rng_seed = j.value("rng_seed", std::uint64_t{0});
    const json& b = j.at("backends");
    for (const auto& [role, _] : b.items()) {
      if (role != "teacher" && role != "student" && role != "judge" && role != "reflector" && role != "eval_judge") {
        fail(ErrorCode::validation, "unknown backend role", {{"role", role}});
      }
    }
    c.teacher = backend_from(b.at("teacher"), "teacher");
    c.student = backend_from(b.at("student"), "student");
    c.judge = backend_from(b.at("judge"), "judge");
    c.reflector = backend_from(b.at("reflector"), "reflector");
    if (b.contains("eval_judge")) c.eval_judge = backend_from(b["eval_judge"], "eval_judge");
    if (j.contains("eval")) {
      const json& e = j["eval"];
      c.eval_corpus_path = absolute_from(e.value("corpus_path", std::string()), base_dir);
      c.eval_size = e.value("size", 0);
    }
    c.trainer_hook = j.value("trainer_hook", std::string("noop"));
    const auto sched = j.value("reflection_schedule", std::string("after_all_rounds"));
    if (sched == "after_all_rounds") c.reflection_schedule = ReflectionSchedule::after_all_rounds;
    else if (sched == "per_round") c.reflection_schedule = ReflectionSchedule::per_round;
    else fail(ErrorCode::validation, "reflection_schedule must be after_all_rounds or per_round", {{"value", sched}});
    c.max_attempts = j.value("max_attempts", 0);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& ex) {
    fail(ErrorCode::validation, std::string("invalid run config: ") + ex.what());
  }
  c.validate();
  return c;
}

json RunConfig::to_json() const {
  json backends = {{"teacher", teacher}, {"student", student}, {"judge", judge}, {"reflector", reflector}};
  if (eval_judge) backends["eval_judge"] = *eval_judge;
  return {{"corpus_path", corpus_path.string()},
          {"run_dir", run_dir.string()},
          {"rounds", rounds},
          {"seed_fraction", seed_fraction.str()},
          {"rng_seed", rng_seed},
          {"backends", backends},
          {"eval", {{"corpus_path", eval_corpus_path.string()}, {"size", eval_size}}},
          {"trainer_hook", trainer_hook},
          {"reflection_schedule", std::string(to_string(reflection_schedule))},
          {"max_attempts", max_attempts}};
}

RunConfig RunConfig::load(const fs::path& path) {
  const std::string text = read_file(path);
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::validation, "run config is not valid JSON", {{"path", path.string()}});
  return from_json(j, path.parent_path());
}

json RunConfig::identity() const {
  json j = to_json();
  j.erase("run_dir");
  j.erase("corpus_path");
  j["eval"].erase("corpus_path");
  j["corpus_sha256"] = fs::exists(corpus_path) ? sha256_file(corpus_path) : std::string();
  j["eval"]["corpus_sha256"] =
      !eval_corpus_path.empty() && fs::exists(eval_corpus_path) ? sha256_file(eval_corpus_path) : std::string();
  return j;
}

std::string RunConfig::digest() const { return sha256_hex(identity().dump()); }

void to_json(json& j, const StageCheckpoint& c) {
  j = {{"run_id", c.run_id},
       {"stage", c.stage},
       {"stage_index", c.stage_index},
       {"round", c.round},
       {"log", {{"offset", c.log.offset}, {"events", c.log.events}, {"chain", c.log.chain}}},
       {"state_digest", c.state_digest},
       {"config_digest", c.config_digest},
       {"rng", {{"seed", c.rng_seed}, {"next_stage_index", c.stage_index + 1}}},
       {"files", c.files},
       {"student", c.student},
       {"hook_state", c.hook_state}};
}

void from_json(const json& j, StageCheckpoint& c) {
  c.run_id = j.at("run_id").get<std::string>();
  c.stage = j.at("stage").get<std::string>();
  c.stage_index = j.at("stage_index").get<int>();
  c.round = j.at("round").get<int>();
  c.log.offset = j.at("log").at("offset").get<std::uint64_t>();
  c.log.events = j.at("log").at("events").get<std::int64_t>();
  c.log.chain = j.at("log").at("chain").get<std::string>();
  c.state_digest = j.at("state_digest").get<std::string>();
  c.config_digest = j.at("config_digest").get<std::string>();
  c.rng_seed = j.at("rng").at("seed").get<std::uint64_t>();
  c.files = j.at("files").get<std::map<std::string, std::string>>();
  c.student = j.at("student").get<BackendConfig>();
  c.hook_state = j.value("hook_state", json::object());
}

std::vector<std::string> stage_plan(const RunConfig& config) {
  std::vector<std::string> plan{"seed"};
  if (config.reflection_schedule == ReflectionSchedule::per_round && config.rounds > 0) {
    for (int i = 1; i <= config.rounds; ++i) {
      plan.push_back(Stage::evolve(i).label());
      plan.push_back(Stage::reflection(i).label());
    }
  } else {
    for (int i = 1; i <= config.rounds; ++i) plan.push_back(Stage::evolve(i).label());
    plan.push_back(Stage::reflection(config.rounds).label());
  }
  plan.push_back("final");
  return plan;
}

// ---------------------------------------------------------------------------
// Trainer hooks
// ---------------------------------------------------------------------------

std::string ShellHook::command_for(const HookContext& ctx) const {
  std::string cmd = replace_all(template_, "{sft_path}", shell_quote(ctx.sft_path.string()));
  return replace_all(cmd, "{stage}", shell_quote(ctx.stage));
}

void ShellHook::train(const HookContext& ctx) {
  const std::string cmd = command_for(ctx);
  const int rc = std::system(cmd.c_str());
  if (rc == -1) fail(ErrorCode::hook_failure, "trainer hook could not be started", {{"command", cmd}});
  const int status = WIFEXITED(rc) ? WEXITSTATUS(rc) : 128 + (WIFSIGNALED(rc) ? WTERMSIG(rc) : 0);
  if (status != 0) {
    fail(ErrorCode::hook_failure, "trainer hook exited with status " + std::to_string(status),
         {{"command", cmd}, {"stage", ctx.stage}, {"exit_status", status}});
  }
}

// ---------------------------------------------------------------------------
// SFT emission
// ---------------------------------------------------------------------------

std::string emit_sft_dataset(const EvolutionLedger& ledger, const std::map<std::string, Problem>& corpus,
                             const fs::path& out, const fs::path& asset_root) {
  std::vector<const SftRecord*> records;
  records.reserve(ledger.sft_records.size());
  for (const auto& r : ledger.sft_records) records.push_back(&r);
  std::sort(records.begin(), records.end(), [](const SftRecord* a, const SftRecord* b) {
    const int oa = a->path.stage.order(), ob = b->path.stage.order();
    return oa != ob ? oa < ob : a->problem_id < b->problem_id;
  });
  std::vector<json> lines;
  lines.reserve(records.size());
  for (const SftRecord* r : records) {
    const auto it = corpus.find(r->problem_id);
    if (it == corpus.end()) fail(ErrorCode::validation, "sft record for an unknown problem", {{"id", r->problem_id}});
    const Problem& p = it->second;
    json content = json::array({{{"type", "text"}, {"text", p.question}}});
    for (const auto& ref : p.images) {
      if (!image_resolvable(ref, asset_root)) {
        fail(ErrorCode::validation, "unresolvable image reference", {{"id", p.id}, {"image", ref}});
      }
      content.push_back({{"type", "image"}, {"image", ref}});
    }
    lines.push_back({{"id", p.id},
                     {"messages",
                      json::array({{{"role", "user"}, {"content", content}},
                                   {{"role", "assistant"}, {"content", r->path.raw_text}}})},
                     {"producer", std::string(to_string(r->path.producer))},
                     {"stage", r->path.stage.label()}});
  }
  return write_jsonl(out, lines);
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

struct Engine::State {
  RunConfig config;
  std::string config_digest;
  EngineOptions options;
  std::optional<RunLock> lock;
  std::map<std::string, Problem> corpus;
  std::vector<Problem> eval_pool;
  EvolutionLedger ledger;
  StageCheckpoint checkpoint;
  std::shared_ptr<TrainerHook> hook;
  std::map<std::string, std::shared_ptr<ChatBackend>> backends;
  std::shared_ptr<ChatBackend> student;

  fs::path asset_root() const { return config.corpus_path.parent_path(); }

  void say(const std::string& line) const {
    if (options.progress) options.progress(line);
  }

  void fault(const std::string& point, const std::string& stage) const {
    if (options.fault) options.fault(point, stage);
  }

  std::shared_ptr<ChatBackend> resolve(const std::string& role, const BackendConfig& cfg) {
    cfg.validate();
    std::shared_ptr<ChatBackend> b;
    try {
      b = options.resolver ? options.resolver(role, cfg) : make_backend(cfg, asset_root());
    } catch (const Error&) {
      throw;
    } catch (const std::exception& ex) {
      fail(ErrorCode::validation, "backend for role " + role + " is not resolvable: " + ex.what(),
           {{"role", role}, {"endpoint", cfg.endpoint}});
    }
    if (!b) fail(ErrorCode::validation, "backend for role " + role + " is not resolvable", {{"role", role}});
    return b;
  }

  void load_inputs() {
    const auto problems = load_corpus(config.corpus_path);
    for (const auto& p : problems) corpus.emplace(p.id, p);
    if (!config.eval_corpus_path.empty()) {
      auto pool = load_corpus(config.eval_corpus_path);
      std::vector<std::string> overlap;
      for (const auto& p : pool)
        if (corpus.contains(p.id)) overlap.push_back(p.id);
      if (!overlap.empty()) {
        fail(ErrorCode::validation, "eval pool overlaps the training corpus", {{"ids", overlap}});
      }
      if (config.eval_size > 0 && static_cast<std::size_t>(config.eval_size) < pool.size()) {
        std::vector<std::string> ids;
        for (const auto& p : pool) ids.push_back(p.id);
        const auto keep = select_seed_pool(ids, Fraction(config.eval_size, static_cast<std::int64_t>(ids.size())),
                                           hash_combine(config.rng_seed, "eval-pool"));
        std::erase_if(pool, [&](const Problem& p) { return !keep.contains(p.id); });
      }
      std::sort(pool.begin(), pool.end(), [](const Problem& a, const Problem& b) { return a.id < b.id; });
      eval_pool = std::move(pool);
    }
  }

  void resolve_fixed_backends() {
    backends["teacher"] = resolve("teacher", config.teacher);
    backends["judge"] = resolve("judge", config.judge);
    backends["reflector"] = resolve("reflector", config.reflector);
    backends["eval_judge"] = config.eval_judge ? resolve("eval_judge", *config.eval_judge) : backends["judge"];
  }

  void make_hook() {
    if (options.hook) hook = options.hook;
    else if (config.trainer_hook == "noop") hook = std::make_shared<NoopHook>();
    else if (config.trainer_hook.find("{sft_path}") != std::string::npos) hook = std::make_shared<ShellHook>(config.trainer_hook);
    else fail(ErrorCode::validation, "trainer_hook needs an injected hook or a {sft_path} template",
              {{"trainer_hook", config.trainer_hook}});
  }

  std::vector<Problem> problems_for(const std::set<std::string>& ids) const {
    std::vector<Problem> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(corpus.at(id));
    return out;
  }

  /// Answerless paths get a synthetic WRONG verdict; the rest go to the judge.
  Judged judge_all(const std::vector<Problem>& problems, const std::vector<PathOutcome>& paths, int round) {
    Judged out;
    std::vector<Problem> to_judge;
    std::vector<ReasoningPath> judge_paths_in;
    for (std::size_t i = 0; i < paths.size(); ++i) {
      const auto& o = paths[i];
      if (!o.path) {
        out.quarantine.push_back(quarantine_record(problems[i].id, "generate", o.job));
        continue;
      }
      ++out.generated;
      if (!o.path->has_answer) {
        auto v = no_answer_verdict(*o.path, round);
        out.verdict_records.push_back({{"problem_id", problems[i].id}, {"path", *o.path}, {"verdict", v}});
        out.pairs.emplace_back(*o.path, std::move(v));
        continue;
      }
      to_judge.push_back(problems[i]);
      judge_paths_in.push_back(*o.path);
    }
    const auto verdicts = judge_paths(*backends.at("judge"), to_judge, judge_paths_in, round, config.rng_seed);
    require_reachable(verdicts, "judge");
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
      if (!verdicts[i].verdict) {
        out.quarantine.push_back(quarantine_record(to_judge[i].id, "judge", verdicts[i].job));
        continue;
      }
      out.verdict_records.push_back(
          {{"problem_id", to_judge[i].id}, {"path", judge_paths_in[i]}, {"verdict", *verdicts[i].verdict}});
      out.pairs.emplace_back(judge_paths_in[i], *verdicts[i].verdict);
    }
    for (const auto& [_, v] : out.pairs) out.correct += v.status == Status::correct;
    std::sort(out.verdict_records.begin(), out.verdict_records.end(),
              [](const json& a, const json& b) { return a["problem_id"] < b["problem_id"]; });
    std::sort(out.quarantine.begin(), out.quarantine.end(), [](const json& a, const json& b) {
      return std::tie(a["problem_id"], a["phase"]) < std::tie(b["problem_id"], b["phase"]);
    });
    return out;
  }

  struct EvalResult {
    std::vector<OrmVerdict> verdicts;
    std::vector<json> records;
    std::int64_t correct = 0;
  };

  EvalResult evaluate(ChatBackend& student_backend, const std::string& label, int stage_index) {
    EvalResult r;
    if (eval_pool.empty()) return r;
    const std::uint64_t seed = hash_combine(hash_combine(config.rng_seed, "eval"), static_cast<std::uint64_t>(stage_index));
    Stage stage = Stage::parse(label);
    const auto paths = generate_paths(student_backend, eval_pool, Producer::student, stage, seed);
    require_reachable(paths, "student (eval)");
    std::vector<Problem> to_judge;
    std::vector<ReasoningPath> judge_in;
    const int eval_index = stage_index - 1;
    for (std::size_t i = 0; i < paths.size(); ++i) {
      if (!paths[i].path) {
        r.records.push_back(quarantine_record(eval_pool[i].id, "eval-generate", paths[i].job));
      } else if (!paths[i].path->has_answer) {
        r.verdicts.push_back(no_answer_verdict(*paths[i].path, eval_index));
      } else {
        to_judge.push_back(eval_pool[i]);
        judge_in.push_back(*paths[i].path);
      }
    }
    const auto verdicts = judge_paths(*backends.at("eval_judge"), to_judge, judge_in, eval_index, seed);
    require_reachable(verdicts, "eval judge");
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
      if (verdicts[i].verdict) r.verdicts.push_back(*verdicts[i].verdict);
      else r.records.push_back(quarantine_record(to_judge[i].id, "eval-judge", verdicts[i].job));
    }
    std::sort(r.verdicts.begin(), r.verdicts.end(),
              [](const OrmVerdict& a, const OrmVerdict& b) { return a.problem_id < b.problem_id; });
    for (const auto& v : r.verdicts) {
      r.correct += v.status == Status::correct;
      r.records.push_back({{"problem_id", v.problem_id}, {"verdict", v}});
    }
    std::sort(r.records.begin(), r.records.end(),
              [](const json& a, const json& b) { return a["problem_id"] < b["problem_id"]; });
    return r;
  }

  json producer_counts(const EvolutionLedger& l) const {
    json counts = {{"teacher", 0}, {"student", 0}, {"reflector", 0}};
    for (const auto& r : l.sft_records) {
      const std::string key(to_string(r.path.producer));
      counts[key] = counts.value(key, 0) + 1;
    }
    return counts;
  }

  void write_checkpoint(const StageCheckpoint& cp) {
    const fs::path dir = stage_dir(config.run_dir, cp.stage);
    fs::create_directories(dir);
    write_file_atomic(dir / kCheckpointFile, json(cp).dump(2) + "\n");
  }

  StageCheckpoint base_checkpoint(const std::string& label, int stage_index, int round) const {
    StageCheckpoint cp;
    cp.run_id = checkpoint.run_id;
    cp.stage = label;
    cp.stage_index = stage_index;
    cp.round = round;
    cp.config_digest = config_digest;
    cp.rng_seed = config.rng_seed;
    return cp;
  }

  /// Emit, train, evaluate, then durably append and checkpoint.
  StageCheckpoint commit_stage(const std::string& label, EvolutionLedger next, Judged judged, json summary) {
    const int stage_index = checkpoint.stage_index + 1;
    const fs::path dir = stage_dir(config.run_dir, label);
    fs::remove_all(dir);
    fs::create_directories(dir);

    StageCheckpoint cp = base_checkpoint(label, stage_index, next.round_index);
    cp.files[rel(label, "sft.jsonl")] = emit_sft_dataset(next, corpus, dir / "sft.jsonl", asset_root());
    cp.files[rel(label, "verdicts.jsonl")] = write_jsonl(dir / "verdicts.jsonl", judged.verdict_records);
    cp.files[rel(label, "quarantine.jsonl")] = write_jsonl(dir / "quarantine.jsonl", judged.quarantine);

    HookContext ctx{label, config.run_dir, dir, dir / "sft.jsonl", &next};
    hook->train(ctx);
    BackendConfig next_student = checkpoint.student;
    std::shared_ptr<ChatBackend> next_backend = student;
    if (fs::exists(dir / "backend.json")) {
      json bj = json::parse(read_file(dir / "backend.json"), nullptr, false);
      if (bj.is_discarded()) fail(ErrorCode::validation, "backend.json written by the trainer hook is not JSON");
      next_student = backend_from(bj, "student");
      next_backend = resolve("student", next_student);
      cp.files[rel(label, "backend.json")] = sha256_file(dir / "backend.json");
    }
    cp.student = next_student;
    cp.hook_state = hook->state();

    auto eval = evaluate(*next_backend, label, stage_index);
    next = record_eval(next, stage_index - 1, label, eval.verdicts);
    cp.files[rel(label, "eval_verdicts.jsonl")] = write_jsonl(dir / "eval_verdicts.jsonl", eval.records);

    summary["stage"] = label;
    summary["sft_records"] = next.sft_records.size();
    summary["sft_sha256"] = cp.files[rel(label, "sft.jsonl")];
    summary["by_producer"] = producer_counts(next);
    summary["remain"] = next.remain_ids.size();
    summary["quarantined"] = judged.quarantine.size();
    summary["eval"] = accuracy_json(eval.correct, static_cast<std::int64_t>(eval.verdicts.size()));
    summary["student"] = next_student.tag;
    next = mark_stage(next, label, summary);

    if (auto v = check_invariants(next); !v.empty()) {
      fail(ErrorCode::corruption, "ledger invariant violated at stage " + label,
           {{"rule", v.front().rule}, {"detail", v.front().detail}});
    }

    const std::vector<LedgerEvent> events(next.history.begin() + static_cast<std::ptrdiff_t>(ledger.history.size()),
                                          next.history.end());
    fault("before-log", label);
    cp.log = append_log(config.run_dir / kLogFile, checkpoint.log, events);
    cp.state_digest = next.state_digest();
    fault("after-log", label);
    write_checkpoint(cp);
    fault("after-checkpoint", label);

    ledger = std::move(next);
    checkpoint = cp;
    student = std::move(next_backend);
    say("[" + label + "] sft " + std::to_string(ledger.sft_records.size()) + "/" +
        std::to_string(ledger.corpus_ids.size()) + ", remain " + std::to_string(ledger.remain_ids.size()) +
        ", quarantined " + std::to_string(judged.quarantine.size()) +
        (eval_pool.empty() ? std::string() : ", eval accuracy " + summary["eval"]["accuracy"].dump()));
    return checkpoint;
  }

  std::string next_stage() const {
    const auto plan = stage_plan(config);
    const auto idx = static_cast<std::size_t>(checkpoint.stage_index);
    return idx < plan.size() ? plan[idx] : std::string();
  }

  void expect_stage(const std::string& prefix) const {
    const std::string next = next_stage();
    if (next.empty()) fail(ErrorCode::stage_order, "run is sealed", {{"requested", prefix}});
    if (!next.starts_with(prefix)) {
      fail(ErrorCode::stage_order, "stage " + prefix + " requested but the next stage is " + next,
           {{"requested", prefix}, {"expected", next}, {"last_committed", checkpoint.stage}});
    }
  }
};

Engine::Engine(std::unique_ptr<State> state) : s_(std::move(state)) {}
Engine::Engine(Engine&&) noexcept = default;
Engine& Engine::operator=(Engine&&) noexcept = default;
Engine::~Engine() = default;

Engine Engine::init(const RunConfig& config, EngineOptions options) {
  config.validate();
  auto s = std::make_unique<State>();
  s->config = config;
  s->options = std::move(options);
  s->load_inputs();
  s->config_digest = config.digest();
  fs::create_directories(config.run_dir);
  s->lock.emplace(config.run_dir);
  if (fs::exists(config.run_dir / kConfigFile) || fs::exists(config.run_dir / kLogFile)) {
    fail(ErrorCode::validation, "run directory is already initialized; use resume",
         {{"run_dir", config.run_dir.string()}});
  }
  s->resolve_fixed_backends();
  s->student = s->resolve("student", config.student);
  s->make_hook();

  std::vector<Problem> problems;
  for (const auto& [_, p] : s->corpus) problems.push_back(p);
  s->ledger = partition_init(problems, config.seed_fraction, config.rng_seed, config.max_attempts);
  s->ledger = mark_stage(s->ledger, "init", {{"stage", "init"}, {"config_digest", s->config_digest}});

  write_file_atomic(config.run_dir / kConfigFile, config.to_json().dump(2) + "\n");
  s->checkpoint.run_id = "run-" + s->config_digest.substr(0, 12);
  StageCheckpoint cp = s->base_checkpoint("init", 0, 0);
  cp.log = append_log(config.run_dir / kLogFile, LogPosition{}, s->ledger.history);
  cp.state_digest = s->ledger.state_digest();
  cp.student = config.student;
  cp.hook_state = s->hook->state();
  s->write_checkpoint(cp);
  s->checkpoint = cp;
  s->say("[init] " + cp.run_id + " config " + s->config_digest + ", corpus " + std::to_string(problems.size()) +
         ", seed pool " + std::to_string(s->ledger.seed_pool.size()));
  return Engine(std::move(s));
}

namespace {

std::vector<StageCheckpoint> read_checkpoints(const fs::path& run_dir) {
  std::vector<StageCheckpoint> out;
  if (!fs::is_directory(run_dir)) return out;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const auto name = entry.path().filename().string();
    if (!entry.is_directory() || !name.starts_with("stage_")) continue;
    const fs::path cp_path = entry.path() / kCheckpointFile;
    if (!fs::exists(cp_path)) continue;
    json j = json::parse(read_file(cp_path), nullptr, false);
    StageCheckpoint cp;
    try {
      if (j.is_discarded()) throw std::runtime_error("not JSON");
      cp = j.get<StageCheckpoint>();
    } catch (const std::exception& ex) {
      fail(ErrorCode::corruption, "unreadable checkpoint", {{"path", cp_path.string()}, {"error", ex.what()}});
    }
    if ("stage_" + cp.stage != name) {
      fail(ErrorCode::corruption, "checkpoint stage does not match its directory", {{"path", cp_path.string()}});
    }
    out.push_back(std::move(cp));
  }
  std::sort(out.begin(), out.end(),
            [](const StageCheckpoint& a, const StageCheckpoint& b) { return a.stage_index < b.stage_index; });
  return out;
}

}  // namespace

std::pair<RunConfig, StageCheckpoint> resume(const fs::path& run_dir) {
  if (!fs::exists(run_dir / kConfigFile)) {
    fail(ErrorCode::validation, "not an initialized run directory", {{"run_dir", run_dir.string()}});
  }
  RunConfig config = RunConfig::load(run_dir / kConfigFile);
  config.run_dir = run_dir;
  auto cps = read_checkpoints(run_dir);
  if (cps.empty()) fail(ErrorCode::corruption, "run directory has no checkpoint", {{"run_dir", run_dir.string()}});
  return {config, cps.back()};
}

Engine Engine::open(const fs::path& run_dir, EngineOptions options, const RunConfig* live) {
  auto s = std::make_unique<State>();
  auto [config, latest] = resume(run_dir);
  s->config = config;
  s->options = std::move(options);
  s->config_digest = config.digest();
  if (live) {
    const json a = live->identity(), b = config.identity();
    if (a != b) {
      std::vector<std::string> keys;
      for (const auto& [k, v] : a.items())
        if (!b.contains(k) || b[k] != v) keys.push_back(k);
      fail(ErrorCode::config_drift, "live config differs from the run directory's config", {{"keys", keys}});
    }
  }
  s->lock.emplace(run_dir);

  const auto cps = read_checkpoints(run_dir);
  latest = cps.back();
  const auto plan = stage_plan(config);
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const auto& cp = cps[i];
    const std::string expected = cp.stage_index == 0 ? "init" : (static_cast<std::size_t>(cp.stage_index - 1) < plan.size() ? plan[cp.stage_index - 1] : "");
    if (cp.stage != expected || cp.stage_index != static_cast<int>(i)) {
      fail(ErrorCode::corruption, "checkpoint sequence is inconsistent with the stage plan",
           {{"stage", cp.stage}, {"stage_index", cp.stage_index}});
    }
    if (cp.config_digest != s->config_digest) {
      fail(ErrorCode::config_drift, "run inputs changed since the checkpoint was written",
           {{"stage", cp.stage}, {"checkpoint_digest", cp.config_digest}, {"current_digest", s->config_digest}});
    }
    for (const auto& [file, digest] : cp.files) {
      const fs::path p = run_dir / file;
      if (!fs::exists(p) || sha256_file(p) != digest) {
        fail(ErrorCode::corruption, "emitted file does not match its checkpoint digest",
             {{"file", file}, {"stage", cp.stage}});
      }
    }
  }

  s->load_inputs();
  auto replayed = replay_log(run_dir / kLogFile, latest.log);
  if (replayed.ledger.state_digest() != latest.state_digest) {
    fail(ErrorCode::corruption, "replayed ledger state does not match the checkpoint",
         {{"offset", latest.log.offset}, {"stage", latest.stage}});
  }
  if (fs::file_size(run_dir / kLogFile) > latest.log.offset) {
    fs::resize_file(run_dir / kLogFile, latest.log.offset);
  }
  s->ledger = std::move(replayed.ledger);
  s->checkpoint = latest;
  s->resolve_fixed_backends();
  s->student = s->resolve("student", latest.student);
  s->make_hook();
  s->hook->restore(latest.hook_state, s->ledger);
  s->say("[resume] " + latest.run_id + " config " + s->config_digest + ", last stage " + latest.stage +
         ", next " + (s->next_stage().empty() ? std::string("(sealed)") : s->next_stage()));
  return Engine(std::move(s));
}

std::string Engine::next_stage() const { return s_->next_stage(); }
const RunConfig& Engine::config() const { return s_->config; }
const EvolutionLedger& Engine::ledger() const { return s_->ledger; }
const StageCheckpoint& Engine::checkpoint() const { return s_->checkpoint; }
const std::map<std::string, Problem>& Engine::corpus() const { return s_->corpus; }
std::vector<StageCheckpoint> Engine::checkpoints() const { return read_checkpoints(s_->config.run_dir); }

StageCheckpoint Engine::run_seed_stage() {
  auto& s = *s_;
  s.expect_stage("seed");
  const auto problems = s.problems_for(s.ledger.seed_pool);
  const auto paths =
      generate_paths(*s.backends.at("teacher"), problems, Producer::teacher, Stage::seed(), s.config.rng_seed);
  require_reachable(paths, "teacher");
  Judged judged = s.judge_all(problems, paths, 0);
  auto next = commit_seed(s.ledger, judged.pairs);
  json summary = {{"attempted", problems.size()}, {"generated", judged.generated},
                  {"judged", judged.pairs.size()}, {"correct", judged.correct}};
  return s.commit_stage("seed", std::move(next), std::move(judged), std::move(summary));
}

StageCheckpoint Engine::run_evolve_round() {
  auto& s = *s_;
  s.expect_stage("round-");
  const int round = s.ledger.round_index + 1;
  std::set<std::string> ids;
  for (const auto& id : s.ledger.remain_ids)
    if (!s.ledger.exhausted_ids.contains(id)) ids.insert(id);
  const auto problems = s.problems_for(ids);
  const auto paths = generate_paths(*s.student, problems, Producer::student, Stage::evolve(round), s.config.rng_seed);
  require_reachable(paths, "student");
  Judged judged = s.judge_all(problems, paths, round);
  auto next = commit_round(s.ledger, judged.pairs);
  json summary = {{"attempted", problems.size()}, {"generated", judged.generated},
                  {"judged", judged.pairs.size()}, {"correct", judged.correct}};
  return s.commit_stage(Stage::evolve(round).label(), std::move(next), std::move(judged), std::move(summary));
}

StageCheckpoint Engine::run_reflection_stage() {
  auto& s = *s_;
  s.expect_stage("reflection-");
  const int after_round = s.ledger.round_index;
  const Stage stage = Stage::reflection(after_round);
  const auto candidates = reflection_candidates(s.ledger);
  std::vector<Problem> problems;
  std::vector<ReasoningPath> wrong;
  std::vector<OrmVerdict> verdicts;
  for (const auto& c : candidates) {
    problems.push_back(s.corpus.at(c.path.problem_id));
    wrong.push_back(c.path);
    verdicts.push_back(c.verdict);
  }
  const auto paths = reflect_paths(*s.backends.at("reflector"), problems, wrong, verdicts, stage, s.config.rng_seed);
  require_reachable(paths, "reflector");
  Judged judged = s.judge_all(problems, paths, after_round);
  auto next = commit_reflection(s.ledger, judged.pairs, after_round);
  json summary = {{"attempted", problems.size()}, {"generated", judged.generated},
                  {"judged", judged.pairs.size()}, {"correct", judged.correct}};
  return s.commit_stage(stage.label(), std::move(next), std::move(judged), std::move(summary));
}

RunManifest Engine::finalize() {
  auto& s = *s_;
  s.expect_stage("final");
  const fs::path dir = stage_dir(s.config.run_dir, "final");
  fs::remove_all(dir);
  fs::create_directories(dir);
  StageCheckpoint cp = s.base_checkpoint("final", s.checkpoint.stage_index + 1, s.ledger.round_index);
  const std::string sft_digest = emit_sft_dataset(s.ledger, s.corpus, dir / "sft.jsonl", s.asset_root());
  cp.files[rel("final", "sft.jsonl")] = sft_digest;

  json stages = json::array();
  for (const auto& e : s.ledger.history)
    if (e.event == kEventStageCommit && e.stage != "init") stages.push_back(e.payload);
  const auto& l = s.ledger;
  json manifest = {
      {"run_id", s.checkpoint.run_id},
      {"config_digest", s.config_digest},
      {"rounds", s.config.rounds},
      {"reflection_schedule", std::string(to_string(s.config.reflection_schedule))},
      {"stages", stages},
      {"final", {{"sft_path", rel("final", "sft.jsonl")}, {"sft_sha256", sft_digest}, {"sft_records", l.sft_records.size()}}},
      {"counts",
       {{"corpus", l.corpus_ids.size()},
        {"sft", l.sft_ids.size()},
        {"remain", l.remain_ids.size()},
        {"exhausted", l.exhausted_ids.size()},
        {"incorrect_entries", l.incorrect_pool.size()},
        {"reflected", l.reflected_ids.size()},
        {"by_producer", s.producer_counts(l)}}},
      {"ledger_state_sha256", l.state_digest()}};
  const std::string bytes = manifest.dump(2) + "\n";
  const std::string manifest_digest = write_file_atomic(s.config.run_dir / kManifestFile, bytes);
  cp.files[kManifestFile] = manifest_digest;

  auto next = mark_stage(l, "final", {{"stage", "final"}, {"manifest_sha256", manifest_digest}});
  const std::vector<LedgerEvent> events(next.history.begin() + static_cast<std::ptrdiff_t>(l.history.size()),
                                        next.history.end());
  s.fault("before-log", "final");
  cp.log = append_log(s.config.run_dir / kLogFile, s.checkpoint.log, events);
  cp.state_digest = next.state_digest();
  cp.student = s.checkpoint.student;
  cp.hook_state = s.hook->state();
  s.fault("after-log", "final");
  s.write_checkpoint(cp);
  s.fault("after-checkpoint", "final");
  s.ledger = std::move(next);
  s.checkpoint = cp;
  s.say("[final] sealed; sft " + std::to_string(l.sft_records.size()) + " records, manifest " + manifest_digest);
  return {manifest, manifest_digest};
}

StageCheckpoint Engine::run_stage(const std::string& label) {
  const std::string next = next_stage();
  if (next.empty()) fail(ErrorCode::stage_order, "run is sealed", {{"requested", label}});
  if (label != next) {
    fail(ErrorCode::stage_order, "stage " + label + " requested but the next stage is " + next,
         {{"requested", label}, {"expected", next}, {"last_committed", s_->checkpoint.stage}});
  }
  if (label == "seed") return run_seed_stage();
  if (label.starts_with("round-")) return run_evolve_round();
  if (label.starts_with("reflection-")) return run_reflection_stage();
  finalize();
  return s_->checkpoint;
}

RunManifest Engine::run_all() {
  if (sealed()) fail(ErrorCode::stage_order, "run is sealed");
  while (next_stage() != "final") run_stage(next_stage());
  return finalize();
}

json dry_run_plan(const RunConfig& config) {
  config.validate();
  const auto problems = load_corpus(config.corpus_path);
  std::vector<std::string> ids;
  for (const auto& p : problems) ids.push_back(p.id);
  const auto pool = select_seed_pool(ids, config.seed_fraction, config.rng_seed);
  json plan = {{"run_id", "run-" + config.digest().substr(0, 12)},
               {"config_digest", config.digest()},
               {"corpus", problems.size()},
               {"seed_pool", pool.size()},
               {"remain", problems.size() - pool.size()},
               {"stages", stage_plan(config)},
               {"trainer_hook", config.trainer_hook}};
  if (!config.eval_corpus_path.empty()) {
    const auto n = load_corpus(config.eval_corpus_path).size();
    plan["eval_pool"] = config.eval_size > 0 ? std::min<std::size_t>(n, config.eval_size) : n;
  }
  return plan;
}

}  // namespace evoforge
