#include "evoforge/orm.hpp"

#include <algorithm>
#include <map>

#include "evoforge/digest.hpp"
#include "evoforge/engine.hpp"
#include "evoforge/error.hpp"
#include "evoforge/prompts.hpp"
#include "evoforge/rundir.hpp"

namespace evoforge {
namespace {

// Seeded order over pool positions; ties (duplicate ids) fall back to position.
std::vector<std::size_t> seeded_order(std::size_t n, std::uint64_t seed, auto&& id_of) {
  std::vector<std::size_t> idx(n);
  std::vector<std::uint64_t> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = i;
    rank[i] = hash_combine(hash_combine(seed, id_of(i)), static_cast<std::uint64_t>(i));
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return rank[a] != rank[b] ? rank[a] < rank[b] : a < b;
  });
  return idx;
}

OrmExample example_from(const LabeledPath& lp, Status label, OrmSource source) {
  OrmExample e;
  e.problem_id = lp.first.id;
  e.question = lp.first.question;
  e.images = lp.first.images;
  e.candidate = lp.second.raw_text;
  e.label = label;
  e.source = source;
  e.ground_answer = lp.first.ground_answer;
  return e;
}

json fraction_or_null(const std::optional<Fraction>& f) { return f ? json(f->str()) : json(nullptr); }
json decimal_or_null(const std::optional<Fraction>& f) { return f ? json(f->decimal(4)) : json(nullptr); }

}  // namespace

std::string_view to_string(OrmSource source) { return source == OrmSource::annotated ? "annotated" : "harvested"; }

OrmSource parse_orm_source(std::string_view text) {
  if (text == "annotated") return OrmSource::annotated;
  if (text == "harvested") return OrmSource::harvested;
  fail(ErrorCode::validation, "unknown ORM example source", {{"source", std::string(text)}});
}

std::string orm_example_violation(const OrmExample& e) {
  if (e.problem_id.empty()) return "example has no id";
  if (e.candidate.empty()) return "example has no candidate path";
  const bool annotated = !e.error_step.empty() || !e.error_analysis.empty();
  if (e.label == Status::wrong && (e.error_step.empty() || e.error_analysis.empty()))
    return "WRONG example without annotation";
  if (e.label == Status::correct && annotated) return "CORRECT example carries an annotation";
  return {};
}

void to_json(json& j, const OrmExample& e) {
  j = {{"id", e.problem_id},
       {"question", e.question},
       {"images", e.images},
       {"candidate", e.candidate},
       {"label", std::string(to_string(e.label))}};
  if (e.label == Status::wrong) {
    j["error_step"] = e.error_step;
    j["error_analysis"] = e.error_analysis;
  }
  j["source"] = std::string(to_string(e.source));
  if (!e.ground_answer.empty()) j["ground_answer"] = e.ground_answer;
}

void from_json(const json& j, OrmExample& e) {
  e = OrmExample{};
  e.problem_id = j.at("id").get<std::string>();
  e.question = j.value("question", std::string());
  e.images = j.value("images", std::vector<std::string>{});
  e.candidate = j.at("candidate").get<std::string>();
  e.label = parse_status(j.at("label").get<std::string>());
  e.error_step = j.value("error_step", std::string());
  e.error_analysis = j.value("error_analysis", std::string());
  e.source = parse_orm_source(j.value("source", std::string(e.label == Status::wrong ? "annotated" : "harvested")));
  e.ground_answer = j.value("ground_answer", std::string());
  if (auto why = orm_example_violation(e); !why.empty())
    fail(ErrorCode::validation, "invalid ORM example: " + why, {{"id", e.problem_id}});
}

void write_orm_dataset(const std::filesystem::path& path, const std::vector<OrmExample>& examples) {
  std::vector<json> rows(examples.begin(), examples.end());
  write_jsonl(path, rows);
}

std::vector<OrmExample> read_orm_dataset(const std::filesystem::path& path) {
  std::vector<OrmExample> out;
  for (const auto& row : read_jsonl(path)) out.push_back(row.get<OrmExample>());
  return out;
}

json CurationResult::report() const {
  return {{"target_per_class", target_per_class},
          {"n_correct", n_correct},
          {"n_wrong", n_wrong},
          {"total", n_correct + n_wrong},
          {"shortfall", shortfall()},
          {"complete", shortfall() == 0},
          {"dropped", dropped}};
}

CurationResult curate_orm_dataset(std::span<const LabeledPath> incorrect, std::span<const LabeledPath> correct,
                                  ChatBackend& annotator, std::int64_t target_per_class,
                                  const CurationOptions& options) {
  if (incorrect.empty() || correct.empty()) {
    fail(ErrorCode::validation, "ORM curation needs non-empty pools",
         {{"incorrect", incorrect.size()}, {"correct", correct.size()}});
  }
  if (target_per_class < 1 || static_cast<std::size_t>(target_per_class) > incorrect.size() ||
      static_cast<std::size_t>(target_per_class) > correct.size()) {
    fail(ErrorCode::validation, "target_per_class must be in [1, smallest pool size]",
         {{"target_per_class", target_per_class}, {"incorrect", incorrect.size()}, {"correct", correct.size()}});
  }
  if (options.batch_size == 0) fail(ErrorCode::validation, "batch_size must be positive");

  CurationResult r;
  r.target_per_class = target_per_class;
  const auto n = static_cast<std::size_t>(target_per_class);

  const auto pos = seeded_order(correct.size(), hash_combine(options.seed, "orm-correct"),
                                [&](std::size_t i) { return correct[i].first.id; });
  for (std::size_t k = 0; k < n; ++k) r.examples.push_back(example_from(correct[pos[k]], Status::correct, OrmSource::harvested));
  r.n_correct = target_per_class;

  const auto neg = seeded_order(incorrect.size(), hash_combine(options.seed, "orm-incorrect"),
                                [&](std::size_t i) { return incorrect[i].first.id; });
  std::size_t next = 0;
  while (static_cast<std::size_t>(r.n_wrong) < n && next < neg.size()) {
    // Ask only for what is still missing, so backfill never overshoots.
    const std::size_t want = std::min({n - static_cast<std::size_t>(r.n_wrong), options.batch_size, neg.size() - next});
    std::vector<Problem> problems;
    std::vector<ReasoningPath> paths;
    for (std::size_t k = 0; k < want; ++k) {
      problems.push_back(incorrect[neg[next + k]].first);
      paths.push_back(incorrect[neg[next + k]].second);
    }
    const auto verdicts = judge_paths(annotator, problems, paths, 0, options.seed);
    for (std::size_t k = 0; k < want; ++k) {
      const auto& lp = incorrect[neg[next + k]];
      const auto& vo = verdicts[k];
      std::string reason;
      if (!vo.verdict) reason = vo.job.failure == FailureKind::none ? "unparsed" : std::string(to_string(vo.job.failure));
      else if (vo.verdict->status != Status::wrong) reason = "annotator-judged-correct";
      else if (vo.verdict->error_step.empty() || vo.verdict->error_analysis.empty()) reason = "empty-annotation";
      if (!reason.empty()) {
        r.dropped.push_back({{"id", lp.first.id}, {"reason", reason}});
        continue;
      }
      auto e = example_from(lp, Status::wrong, OrmSource::annotated);
      e.error_step = vo.verdict->error_step;
      e.error_analysis = vo.verdict->error_analysis;
      r.examples.push_back(std::move(e));
      ++r.n_wrong;
    }
    next += want;
  }
  return r;
}

CurationResult curate_orm_dataset(std::span<const LabeledPath> incorrect, std::span<const LabeledPath> correct,
                                  const BackendConfig& annotator, std::int64_t target_per_class,
                                  const CurationOptions& options) {
  auto backend = make_backend(annotator);
  return curate_orm_dataset(incorrect, correct, *backend, target_per_class, options);
}

RunPools pools_from_run(const std::filesystem::path& run_dir) {
  const auto [config, latest] = resume(run_dir);
  const auto replayed = replay_log(run_dir / "ledger.log", latest.log);
  std::map<std::string, Problem> corpus;
  for (auto& p : load_corpus(config.corpus_path)) corpus.emplace(p.id, std::move(p));
  RunPools pools;
  for (const auto& e : replayed.ledger.incorrect_pool) pools.incorrect.emplace_back(corpus.at(e.path.problem_id), e.path);
  for (const auto& r : replayed.ledger.sft_records) pools.correct.emplace_back(corpus.at(r.problem_id), r.path);
  return pools;
}

OrmTestset build_orm_testset(std::span<const OrmExample> pool, std::int64_t n_pos, std::int64_t n_neg,
                             std::uint64_t seed, const std::set<std::string>& training_ids) {
  if (n_pos < 0 || n_neg < 0 || n_pos + n_neg == 0) {
    fail(ErrorCode::validation, "test set sizes must be non-negative and not both zero", {{"n_pos", n_pos}, {"n_neg", n_neg}});
  }
  std::set<std::string> overlap;
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (auto why = orm_example_violation(pool[i]); !why.empty())
      fail(ErrorCode::validation, "invalid ORM example: " + why, {{"id", pool[i].problem_id}});
    if (training_ids.contains(pool[i].problem_id)) overlap.insert(pool[i].problem_id);
    (pool[i].label == Status::correct ? pos : neg).push_back(i);
  }
  if (!overlap.empty()) {
    fail(ErrorCode::validation, "test pool overlaps training ids", {{"offenders", overlap}, {"count", overlap.size()}});
  }
  if (static_cast<std::int64_t>(pos.size()) < n_pos || static_cast<std::int64_t>(neg.size()) < n_neg) {
    fail(ErrorCode::validation, "pool too small for the requested test set",
         {{"n_pos", n_pos}, {"n_neg", n_neg}, {"available_pos", pos.size()}, {"available_neg", neg.size()}});
  }
  OrmTestset t;
  auto take = [&](const std::vector<std::size_t>& members, std::int64_t k, std::string_view salt) {
    const auto order = seeded_order(members.size(), hash_combine(seed, salt),
                                    [&](std::size_t i) { return pool[members[i]].problem_id; });
    for (std::int64_t c = 0; c < k; ++c) {
      const auto& e = pool[members[order[static_cast<std::size_t>(c)]]];
      t.examples.push_back(e);
      t.ids.insert(e.problem_id);
    }
  };
  take(pos, n_pos, "orm-test-pos");
  take(neg, n_neg, "orm-test-neg");
  return t;
}

json OrmEvalReport::to_json() const {
  json fails = json::array(), rows = json::array();
  for (const auto& o : outcomes) {
    rows.push_back({{"id", o.problem_id},
                    {"label", std::string(evoforge::to_string(o.label))},
                    {"predicted", o.predicted ? json(std::string(evoforge::to_string(*o.predicted))) : json(nullptr)},
                    {"correct", o.correct}});
    if (!o.predicted) fails.push_back({{"id", o.problem_id}, {"failure", o.failure}});
  }
  return {{"n_pos", n_pos},
          {"n_neg", n_neg},
          {"pos_correct", pos_correct},
          {"neg_correct", neg_correct},
          {"pos_acc", fraction_or_null(pos_acc)},
          {"neg_acc", fraction_or_null(neg_acc)},
          {"overall_acc", overall_acc.str()},
          {"pos_acc_decimal", decimal_or_null(pos_acc)},
          {"neg_acc_decimal", decimal_or_null(neg_acc)},
          {"overall_acc_decimal", overall_acc.decimal(4)},
          {"failures", fails},
          {"outcomes", rows}};
}

OrmEvalReport evaluate_orm(ChatBackend& judge, std::span<const OrmExample> testset, std::uint64_t run_seed) {
  if (testset.empty()) fail(ErrorCode::validation, "ORM test set is empty");
  std::vector<Problem> problems;
  std::vector<ReasoningPath> paths;
  problems.reserve(testset.size());
  paths.reserve(testset.size());
  for (const auto& e : testset) {
    problems.push_back({e.problem_id, e.question, e.images, e.ground_answer, json::object()});
    paths.push_back(make_path(e.problem_id, e.candidate, Producer::student, Stage::evolve(1)));
  }
  const auto verdicts = judge_paths(judge, problems, paths, 0, run_seed);

  OrmEvalReport r;
  for (std::size_t i = 0; i < testset.size(); ++i) {
    const auto& e = testset[i];
    OrmOutcome o;
    o.problem_id = e.problem_id;
    o.label = e.label;
    if (verdicts[i].verdict) o.predicted = verdicts[i].verdict->status;
    else o.failure = std::string(to_string(verdicts[i].job.failure)) + ": " + verdicts[i].job.detail;
    o.correct = o.predicted && *o.predicted == e.label;
    if (e.label == Status::correct) {
      ++r.n_pos;
      r.pos_correct += o.correct;
    } else {
      ++r.n_neg;
      r.neg_correct += o.correct;
    }
    r.failures += !o.predicted;
    r.outcomes.push_back(std::move(o));
  }
  if (r.n_pos > 0) r.pos_acc = Fraction(r.pos_correct, r.n_pos);
  if (r.n_neg > 0) r.neg_acc = Fraction(r.neg_correct, r.n_neg);
  r.overall_acc = Fraction(r.pos_correct + r.neg_correct, r.n_pos + r.n_neg);
  return r;
}

OrmEvalReport evaluate_orm(const BackendConfig& judge, std::span<const OrmExample> testset, std::uint64_t run_seed) {
  auto backend = make_backend(judge);
  return evaluate_orm(*backend, testset, run_seed);
}

}  // namespace evoforge
