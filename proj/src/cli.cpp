#include "evoforge/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <optional>

#include "evoforge/digest.hpp"
#include "evoforge/engine.hpp"
#include "evoforge/error.hpp"
#include "evoforge/metrics.hpp"
#include "evoforge/orm.hpp"
#include "evoforge/rundir.hpp"
#include "evoforge/simlab.hpp"

namespace evoforge {
namespace {

struct RunFlags {
  std::string config;
  std::string run_dir;
  std::uint64_t seed = 0;
  int rounds = 0;
  bool dry_run = false;
  bool seed_set = false;
  bool rounds_set = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "Run configuration (JSON)");
    cmd->add_option("--run-dir", run_dir, "Run directory (overrides the config)");
    cmd->add_option_function<std::uint64_t>("--seed", [this](const std::uint64_t& v) { seed = v, seed_set = true; },
                                            "RNG seed override");
    cmd->add_option_function<int>("--rounds", [this](const int& v) { rounds = v, rounds_set = true; },
                                  "Number of self-evolving rounds (override)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_flag("--dry-run", dry_run, "Validate and print the plan without touching anything");
  }

  bool overrides() const { return seed_set || rounds_set; }

  void apply(RunConfig& c) const {
    if (!run_dir.empty()) c.run_dir = fs::absolute(run_dir);
    if (seed_set) c.rng_seed = seed;
    if (rounds_set) c.rounds = rounds;
  }

  /// The config the caller asserts: --config with overrides, or the stored
  /// config with overrides, or nothing.
  std::optional<RunConfig> live() const {
    if (!config.empty()) {
      auto c = RunConfig::load(config);
      apply(c);
      c.validate();
      return c;
    }
    if (overrides()) {
      auto c = resume(target()).first;
      apply(c);
      return c;
    }
    return std::nullopt;
  }

  fs::path target() const {
    if (!run_dir.empty()) return fs::absolute(run_dir);
    if (!config.empty()) return RunConfig::load(config).run_dir;
    fail(ErrorCode::validation, "--run-dir or --config is required");
  }
};

void print_header(std::ostream& out, const std::string& run_id, const std::string& digest) {
  out << "run_id " << run_id << "\nconfig_digest " << digest << "\n";
}

void print_header(std::ostream& out, const RunConfig& c) {
  const auto d = c.digest();
  print_header(out, "run-" + d.substr(0, 12), d);
}

json last_stage_summary(const EvolutionLedger& l) {
  for (auto it = l.history.rbegin(); it != l.history.rend(); ++it)
    if (it->event == kEventStageCommit) return it->payload;
  return json::object();
}

void print_stage(std::ostream& out, const Engine& e) {
  const auto s = last_stage_summary(e.ledger());
  out << "committed " << e.checkpoint().stage;
  for (const char* k : {"attempted", "judged", "correct", "sft_records", "remain", "quarantined"})
    if (s.contains(k)) out << ' ' << k << '=' << s[k].dump();
  if (s.contains("eval") && s["eval"].is_object() && s["eval"].contains("accuracy"))
    out << " eval_accuracy=" << s["eval"]["accuracy"].get<std::string>();
  out << "\n";
}

void print_manifest(std::ostream& out, const RunManifest& m) {
  const auto& f = m.body.at("final");
  out << "sealed sft_records=" << f.at("sft_records") << " sft_sha256=" << f.at("sft_sha256").get<std::string>()
      << " manifest_sha256=" << m.digest << "\n";
}

EngineOptions engine_options(std::ostream& out) {
  EngineOptions o;
  o.progress = [&out](const std::string& line) { out << line << "\n"; };
  return o;
}

Engine open_checked(const RunFlags& f, std::ostream& out) {
  const auto live = f.live();
  auto e = Engine::open(f.target(), engine_options(out), live ? &*live : nullptr);
  print_header(out, e.checkpoint().run_id, e.checkpoint().config_digest);
  return e;
}

// --dry-run for an existing run: report the stage that would run next.
void dry_run_existing(const RunFlags& f, const std::string& wanted, std::ostream& out) {
  const auto dir = f.target();
  const auto [stored, latest] = resume(dir);
  if (const auto live = f.live(); live && live->digest() != stored.digest()) {
    fail(ErrorCode::config_drift, "live config differs from the run directory", {{"run_dir", dir.string()}});
  }
  print_header(out, latest.run_id, latest.config_digest);
  const auto plan = stage_plan(stored);
  const auto idx = static_cast<std::size_t>(latest.stage_index);
  const std::string next = idx < plan.size() ? plan[idx] : "";
  if (!wanted.empty()) {
    if (next.empty()) fail(ErrorCode::stage_order, "run is sealed", {{"requested", wanted}});
    if (!next.starts_with(wanted))
      fail(ErrorCode::stage_order, "stage " + wanted + " requested but the next stage is " + next,
           {{"requested", wanted}, {"expected", next}, {"last_committed", latest.stage}});
  }
  json remaining = json::array();
  for (std::size_t i = idx; i < plan.size(); ++i) remaining.push_back(plan[i]);
  out << json{{"dry_run", true}, {"last_committed", latest.stage}, {"next", next}, {"remaining", remaining}}.dump(2)
      << "\n";
}

BackendConfig load_backend(const std::string& path) {
  auto c = json::parse(read_file(path)).get<BackendConfig>();
  c.validate();
  return c;
}

void print_report_rows(std::ostream& out, const std::vector<RoundReport>& rows) {
  out << std::left << std::setw(16) << "stage" << std::setw(10) << "judged" << std::setw(10) << "correct"
      << std::setw(12) << "accuracy" << "c->c  c->i  i->c  i->i\n";
  for (const auto& r : rows) {
    out << std::setw(16) << r.stage << std::setw(10) << r.n_judged << std::setw(10) << r.n_correct << std::setw(12)
        << (r.accuracy ? r.accuracy->decimal(4) : std::string("-"));
    if (r.transition) {
      const auto& c = r.transition->counts;
      out << c.correct_correct << ' ' << c.correct_incorrect << ' ' << c.incorrect_correct << ' ' << c.incorrect_incorrect;
    } else {
      out << "-";
    }
    out << "\n";
  }
}

void run_init(const RunFlags& f, std::ostream& out) {
  if (f.config.empty()) fail(ErrorCode::validation, "init needs --config");
  auto cfg = *f.live();
  print_header(out, cfg);
  if (f.dry_run) {
    out << dry_run_plan(cfg).dump(2) << "\n";
    return;
  }
  auto e = Engine::init(cfg, engine_options(out));
  const auto& l = e.ledger();
  out << "initialized " << cfg.run_dir.string() << " corpus=" << l.corpus_ids.size()
      << " seed_pool=" << l.seed_pool.size() << " remain=" << l.remain_ids.size() << "\n";
}

void run_stage_command(const RunFlags& f, const std::string& prefix, std::ostream& out) {
  if (f.dry_run) return dry_run_existing(f, prefix, out);
  auto e = open_checked(f, out);
  if (prefix == "seed") e.run_seed_stage();
  else if (prefix == "round-") e.run_evolve_round();
  else e.run_reflection_stage();
  print_stage(out, e);
}

void run_finalize(const RunFlags& f, std::ostream& out) {
  if (f.dry_run) return dry_run_existing(f, "final", out);
  auto e = open_checked(f, out);
  print_manifest(out, e.finalize());
}

void run_all(const RunFlags& f, std::ostream& out) {
  const fs::path dir = f.target();
  const bool fresh = !fs::exists(dir / "config.json");
  if (f.dry_run) {
    if (fresh) {
      if (f.config.empty()) fail(ErrorCode::validation, "run directory is not initialized; pass --config");
      auto cfg = *f.live();
      print_header(out, cfg);
      out << dry_run_plan(cfg).dump(2) << "\n";
      return;
    }
    return dry_run_existing(f, "", out);
  }
  std::optional<Engine> e;
  if (fresh) {
    if (f.config.empty()) fail(ErrorCode::validation, "run directory is not initialized; pass --config");
    auto cfg = *f.live();
    print_header(out, cfg);
    e.emplace(Engine::init(cfg, engine_options(out)));
  } else {
    e.emplace(open_checked(f, out));
  }
  while (e->next_stage() != "final" && !e->next_stage().empty()) {
    e->run_stage(e->next_stage());
    print_stage(out, *e);
  }
  if (e->sealed()) {
    out << "already sealed\n";
    return;
  }
  print_manifest(out, e->finalize());
}

void run_resume(const RunFlags& f, std::ostream& out) {
  if (f.dry_run) return dry_run_existing(f, "", out);
  auto e = open_checked(f, out);
  out << "resuming after " << e.checkpoint().stage << "\n";
  while (!e.sealed() && e.next_stage() != "final") {
    e.run_stage(e.next_stage());
    print_stage(out, e);
  }
  if (e.sealed()) {
    out << "already sealed\n";
    return;
  }
  print_manifest(out, e.finalize());
}

void run_emit_sft(const RunFlags& f, const std::string& out_path, std::ostream& out) {
  const auto dir = f.target();
  const auto [cfg, latest] = resume(dir);
  print_header(out, latest.run_id, latest.config_digest);
  const auto replayed = replay_log(dir / "ledger.log", latest.log);
  if (f.dry_run) {
    out << json{{"dry_run", true}, {"records", replayed.ledger.sft_records.size()}, {"out", out_path}}.dump() << "\n";
    return;
  }
  std::map<std::string, Problem> corpus;
  for (auto& p : load_corpus(cfg.corpus_path)) corpus.emplace(p.id, std::move(p));
  const auto digest = emit_sft_dataset(replayed.ledger, corpus, out_path, cfg.corpus_path.parent_path());
  out << "wrote " << replayed.ledger.sft_records.size() << " records to " << out_path << " sha256=" << digest << "\n";
}

void run_stats(const RunFlags& f, std::ostream& out) {
  const auto dir = f.target();
  const auto latest = resume(dir).second;
  print_header(out, latest.run_id, latest.config_digest);
  if (f.dry_run) {
    std::string source;
    print_report_rows(out, round_reports(dir, &source));
    return;
  }
  const auto files = emit_report(dir);
  out << "source " << files.source << "\n";
  print_report_rows(out, files.rounds);
  for (const auto& [name, digest] : files.digests) out << "wrote " << name << " sha256=" << digest << "\n";
}

struct OrmBuildFlags {
  std::string annotator, out;
  std::int64_t target = 0;
  std::uint64_t seed = 0;
};

void run_orm_build(const RunFlags& f, const OrmBuildFlags& o, std::ostream& out) {
  const auto dir = f.target();
  const auto latest = resume(dir).second;
  print_header(out, latest.run_id, latest.config_digest);
  const auto pools = pools_from_run(dir);
  const auto annotator = load_backend(o.annotator);
  if (f.dry_run) {
    out << json{{"dry_run", true}, {"incorrect", pools.incorrect.size()}, {"correct", pools.correct.size()},
                {"target_per_class", o.target}}.dump() << "\n";
    return;
  }
  const auto r = curate_orm_dataset(pools.incorrect, pools.correct, annotator, o.target, {.seed = o.seed});
  write_orm_dataset(o.out, r.examples);
  const auto report = r.report();
  write_file_atomic(o.out + ".report.json", report.dump(2) + "\n");
  out << "wrote " << r.examples.size() << " examples to " << o.out << " (correct " << r.n_correct << ", wrong "
      << r.n_wrong << ", shortfall " << r.shortfall() << ")\n";
}

struct OrmTestsetFlags {
  std::string pool, out, train;
  std::int64_t n_pos = 0, n_neg = 0;
  std::uint64_t seed = 0;
  bool dry_run = false;
};

void run_orm_testset(const OrmTestsetFlags& o, std::ostream& out) {
  const auto pool = read_orm_dataset(o.pool);
  std::set<std::string> training;
  if (!o.train.empty())
    for (const auto& e : read_orm_dataset(o.train)) training.insert(e.problem_id);
  const auto t = build_orm_testset(pool, o.n_pos, o.n_neg, o.seed, training);
  if (o.dry_run) {
    out << json{{"dry_run", true}, {"examples", t.examples.size()}}.dump() << "\n";
    return;
  }
  write_orm_dataset(o.out, t.examples);
  write_file_atomic(o.out + ".ids.json", json(t.ids).dump(2) + "\n");
  out << "wrote " << t.examples.size() << " examples to " << o.out << " (ids in " << o.out << ".ids.json)\n";
}

struct OrmEvalFlags {
  std::string judge, testset, out;
  std::uint64_t seed = 0;
  bool dry_run = false;
};

void run_orm_eval(const OrmEvalFlags& o, std::ostream& out) {
  const auto judge = load_backend(o.judge);
  const auto set = read_orm_dataset(o.testset);
  if (o.dry_run) {
    out << json{{"dry_run", true}, {"examples", set.size()}, {"judge", judge.tag}}.dump() << "\n";
    return;
  }
  const auto r = evaluate_orm(judge, set, o.seed);
  auto cell = [](const std::optional<Fraction>& f) { return f ? f->decimal(4) + " (" + f->str() + ")" : std::string("-"); };
  out << "positive " << cell(r.pos_acc) << "\nnegative " << cell(r.neg_acc) << "\noverall  "
      << cell(std::optional<Fraction>(r.overall_acc)) << "\njudge_failures " << r.failures << "\n";
  if (!o.out.empty()) write_file_atomic(o.out, r.to_json().dump(2) + "\n");
}

struct SimFlags {
  std::string profile = "oracle", law = "uniform", mode = "threshold", params, run_dir, schedule = "after-all-rounds";
  std::string seed_fraction;
  int n = 0, eval_n = -1, rounds = 3, staged_easy = -1, max_attempts = 0;
  std::uint64_t seed = 0;
  double skill0 = -1, gain = -1, recovery = -1, teacher_accuracy = -1;
  bool dry_run = false;
  CLI::Option* seed_opt = nullptr;
};

WorldParams sim_params(const SimFlags& s) {
  WorldParams p;
  if (!s.params.empty()) p = json::parse(read_file(s.params)).get<WorldParams>();
  p.judge = JudgeProfile::named(s.profile);
  p.law = parse_difficulty_law(s.law);
  p.mode = parse_student_mode(s.mode);
  if (s.n > 0) p.n = s.n;
  if (s.eval_n >= 0) p.eval_n = s.eval_n;
  if (s.seed_opt->count()) p.seed = s.seed;
  if (s.skill0 >= 0) p.skill0 = s.skill0;
  if (s.gain >= 0) p.gain = s.gain;
  if (s.recovery >= 0) p.recovery = s.recovery;
  if (s.teacher_accuracy >= 0) p.teacher_accuracy = s.teacher_accuracy;
  if (!s.seed_fraction.empty()) p.seed_fraction = Fraction::parse(s.seed_fraction);
  if (s.staged_easy >= 0) p.staged_easy = s.staged_easy;
  p.validate();
  return p;
}

void run_simulate(const SimFlags& s, std::ostream& out) {
  const auto params = sim_params(s);
  if (s.schedule != "after-all-rounds" && s.schedule != "per-round")
    fail(ErrorCode::validation, "unknown reflection schedule", {{"schedule", s.schedule}});
  if (s.dry_run) {
    out << json{{"dry_run", true}, {"world", params}, {"rounds", s.rounds}}.dump(2) << "\n";
    return;
  }
  fs::path dir;
  bool scratch = false;
  if (s.run_dir.empty()) {
    dir = fs::temp_directory_path() / ("evoforge-sim-" + std::to_string(hash_combine(params.seed, json(params).dump())));
    fs::remove_all(dir);
    scratch = true;
  } else {
    dir = fs::absolute(s.run_dir);
    if (fs::exists(dir) && !fs::is_empty(dir)) fail(ErrorCode::validation, "simulation run directory is not empty", {{"run_dir", dir.string()}});
  }
  SimRunOptions opts;
  opts.run_dir = dir;
  opts.rounds = s.rounds;
  opts.max_attempts = s.max_attempts;
  opts.reflection_schedule = s.schedule == "per-round" ? ReflectionSchedule::per_round : ReflectionSchedule::after_all_rounds;
  struct Scratch {
    fs::path dir;
    ~Scratch() {
      std::error_code ec;
      if (!dir.empty()) fs::remove_all(dir, ec);
    }
  } cleanup{scratch ? dir : fs::path()};
  const auto r = run_simulation(make_world(params), opts);
  const auto latest = resume(dir).second;
  print_header(out, latest.run_id, latest.config_digest);
  out << "world n=" << params.n << " eval_n=" << params.eval_n << " law=" << to_string(params.law)
      << " mode=" << to_string(params.mode) << " judge=" << params.judge.name << " seed=" << params.seed << "\n";
  print_report_rows(out, r.reports);
  out << "sft_records " << r.sft_records << "\ntruly_wrong_records " << r.truly_wrong_records << "\nfinal_skill "
      << r.final_skill << "\nviolations " << r.violations.size() << "\nelapsed_ms " << r.elapsed.count() << "\n";
  if (!scratch) out << "run_dir " << dir.string() << "\n";
}

int report_error(std::ostream& err, const Error& e) {
  err << e.to_json().dump() << "\n";
  return e.exit_code();
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"evoforge: self-evolving data flywheel for multimodal math reasoning"};
  app.name("evoforge");
  app.require_subcommand(1);

  RunFlags run;
  auto* init = app.add_subcommand("init", "Partition the corpus and scaffold a run directory");
  auto* seed = app.add_subcommand("seed", "Run the teacher distillation stage");
  auto* round = app.add_subcommand("round", "Run the next self-evolving round");
  auto* reflect = app.add_subcommand("reflect", "Run the next reflection stage");
  auto* finalize = app.add_subcommand("finalize", "Emit the final SFT dataset and manifest");
  auto* all = app.add_subcommand("run-all", "Initialize if needed and run every remaining stage");
  auto* res = app.add_subcommand("resume", "Reopen a run and continue to the end");
  auto* emit = app.add_subcommand("emit-sft", "Write the committed SFT dataset to a file");
  auto* stats = app.add_subcommand("stats", "Write report.json and CSV tables for a run");
  for (auto* c : {init, seed, round, reflect, finalize, all, res, emit, stats}) run.attach(c);
  std::string sft_out;
  emit->add_option("--out", sft_out, "Output JSON-lines path")->required();

  auto* orm_build = app.add_subcommand("orm-build", "Curate a balanced ORM dataset from a run");
  OrmBuildFlags ob;
  run.attach(orm_build);
  orm_build->add_option("--annotator", ob.annotator, "Annotator backend config (JSON)")->required();
  orm_build->add_option("--target", ob.target, "Examples per class")->required()->check(CLI::PositiveNumber);
  orm_build->add_option("--out", ob.out, "Output JSON-lines path")->required();
  orm_build->add_option("--sample-seed", ob.seed, "Subsample seed");

  auto* orm_test = app.add_subcommand("orm-testset", "Sample a balanced ORM test set");
  OrmTestsetFlags ot;
  orm_test->add_option("--pool", ot.pool, "ORM dataset to sample from")->required();
  orm_test->add_option("--n-pos", ot.n_pos, "CORRECT examples")->required()->check(CLI::NonNegativeNumber);
  orm_test->add_option("--n-neg", ot.n_neg, "WRONG examples")->required()->check(CLI::NonNegativeNumber);
  orm_test->add_option("--seed", ot.seed, "Sampling seed");
  orm_test->add_option("--exclude", ot.train, "Training ORM dataset whose ids must not appear");
  orm_test->add_option("--out", ot.out, "Output JSON-lines path")->required();
  orm_test->add_flag("--dry-run", ot.dry_run, "Validate without writing");

  auto* orm_eval = app.add_subcommand("orm-eval", "Score a judge backend on an ORM test set");
  OrmEvalFlags oe;
  orm_eval->add_option("--judge", oe.judge, "Judge backend config (JSON)")->required();
  orm_eval->add_option("--testset", oe.testset, "ORM test set (JSON-lines)")->required();
  orm_eval->add_option("--out", oe.out, "Report path (JSON)");
  orm_eval->add_option("--seed", oe.seed, "Request nonce seed");
  orm_eval->add_flag("--dry-run", oe.dry_run, "Validate without calling the judge");

  auto* sim = app.add_subcommand("simulate", "Run the pipeline against a synthetic world");
  SimFlags sf;
  sim->add_option("--profile", sf.profile, "Judge profile: oracle, ours, binary")->check(CLI::IsMember({"oracle", "ours", "binary"}));
  sim->add_option("--n", sf.n, "Training problems")->check(CLI::PositiveNumber);
  sim->add_option("--eval-n", sf.eval_n, "Held-out problems (0 for none)")->check(CLI::NonNegativeNumber);
  sim->add_option("--rounds", sf.rounds, "Self-evolving rounds")->check(CLI::NonNegativeNumber);
  sf.seed_opt = sim->add_option("--seed", sf.seed, "World and run seed");
  sim->add_option("--law", sf.law, "Difficulty law: uniform, bimodal, threshold, staged");
  sim->add_option("--mode", sf.mode, "Student mode: threshold, stochastic");
  sim->add_option("--skill0", sf.skill0, "Initial student skill");
  sim->add_option("--gain", sf.gain, "Skill gain per fully trained corpus");
  sim->add_option("--recovery", sf.recovery, "Reflector recovery rate");
  sim->add_option("--teacher-accuracy", sf.teacher_accuracy, "Teacher accuracy");
  sim->add_option("--seed-fraction", sf.seed_fraction, "Seed pool fraction, e.g. 1/10");
  sim->add_option("--staged-easy", sf.staged_easy, "Easy non-seed problems for the staged law");
  sim->add_option("--max-attempts", sf.max_attempts, "Attempts per problem before exhaustion (0 unbounded)");
  sim->add_option("--schedule", sf.schedule, "Reflection schedule: after-all-rounds, per-round");
  sim->add_option("--params", sf.params, "World parameters (JSON); flags override");
  sim->add_option("--run-dir", sf.run_dir, "Keep the run here instead of a scratch directory");
  sim->add_flag("--dry-run", sf.dry_run, "Print the resolved world without running");

  std::vector<const char*> argv{"evoforge"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return report_error(err, Error(ErrorCode::validation, e.what(), {{"argv", args}}));
  }

  try {
    if (*init) run_init(run, out);
    else if (*seed) run_stage_command(run, "seed", out);
    else if (*round) run_stage_command(run, "round-", out);
    else if (*reflect) run_stage_command(run, "reflection-", out);
    else if (*finalize) run_finalize(run, out);
    else if (*all) run_all(run, out);
    else if (*res) run_resume(run, out);
    else if (*emit) run_emit_sft(run, sft_out, out);
    else if (*stats) run_stats(run, out);
    else if (*orm_build) run_orm_build(run, ob, out);
    else if (*orm_test) run_orm_testset(ot, out);
    else if (*orm_eval) run_orm_eval(oe, out);
    else if (*sim) run_simulate(sf, out);
    return 0;
  } catch (const Error& e) {
    return report_error(err, e);
  } catch (const json::exception& e) {
    return report_error(err, Error(ErrorCode::validation, e.what()));
  } catch (const fs::filesystem_error& e) {
    return report_error(err, Error(ErrorCode::io, e.what(), {{"path", e.path1().string()}}));
  } catch (const std::exception& e) {
    return report_error(err, Error(ErrorCode::io, e.what()));
  }
}

}  // namespace evoforge
