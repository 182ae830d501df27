#include "evoforge/metrics.hpp"

#include <algorithm>
#include <sstream>

#include "evoforge/engine.hpp"
#include "evoforge/error.hpp"
#include "evoforge/rundir.hpp"

namespace evoforge {
namespace {

struct KeywordFamily {
  TaxonomyLabel label;
  std::vector<std::string_view> words;
};

// Priority order: the first family with a hit wins.
const std::vector<KeywordFamily>& families() {
  static const std::vector<KeywordFamily> f = {
      {TaxonomyLabel::vision_recognition,
       {"diagram", "figure", "image", "visual", "picture", "chart", "graph", "drawing", "marking", "recogni"}},
      {TaxonomyLabel::calculation,
       {"arithmetic", "calculation", "miscalcul", "computation", "computed", "multiplication", "multiplied",
        "subtraction", "sign error", "rounding"}},
      {TaxonomyLabel::knowledge,
       {"formula", "theorem", "definition", "identity", "property", "law of", "known fact", "concept"}},
      {TaxonomyLabel::question_misunderstanding,
       {"misunderst", "misinterpret", "the question asks", "question asked", "asked for", "requirement",
        "intent", "misread the question"}},
      {TaxonomyLabel::reasoning,
       {"reasoning", "logic", "does not follow", "assum", "inference", "deduc", "conclusion", "unjustified",
        "invalid step", "approach", "flawed"}},
  };
  return f;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

json fraction_json(const std::optional<Fraction>& f) { return f ? json(f->str()) : json(nullptr); }
json decimal_json(const std::optional<Fraction>& f) { return f ? json(f->decimal(4)) : json(nullptr); }

std::string csv_cell(const std::optional<Fraction>& f, bool decimal) {
  if (!f) return "";
  return decimal ? f->decimal(4) : f->str();
}

}  // namespace

std::string_view to_string(TaxonomyLabel label) {
  switch (label) {
    case TaxonomyLabel::reasoning: return "reasoning";
    case TaxonomyLabel::question_misunderstanding: return "question_misunderstanding";
    case TaxonomyLabel::knowledge: return "knowledge";
    case TaxonomyLabel::calculation: return "calculation";
    case TaxonomyLabel::vision_recognition: return "vision_recognition";
    case TaxonomyLabel::unclassified: return "unclassified";
  }
  return "unclassified";
}

TaxonomyLabel parse_taxonomy(std::string_view text) {
  for (auto l : kTaxonomyLabels)
    if (to_string(l) == text) return l;
  fail(ErrorCode::validation, "unknown taxonomy label", {{"label", std::string(text)}});
}

Fraction round_accuracy(const std::vector<OrmVerdict>& verdicts) {
  if (verdicts.empty()) fail(ErrorCode::validation, "round_accuracy needs at least one verdict");
  const auto correct = std::count_if(verdicts.begin(), verdicts.end(),
                                     [](const OrmVerdict& v) { return v.status == Status::correct; });
  return Fraction(correct, static_cast<std::int64_t>(verdicts.size()));
}

AccuracyResult round_accuracy(const std::vector<std::optional<OrmVerdict>>& verdicts) {
  AccuracyResult r;
  for (const auto& v : verdicts) {
    if (!v) {
      ++r.n_failures;
      continue;
    }
    ++r.n_judged;
    r.n_correct += v->status == Status::correct;
  }
  if (r.n_judged == 0) fail(ErrorCode::validation, "round_accuracy needs at least one judged verdict",
                            {{"judge_failures", r.n_failures}});
  r.accuracy = Fraction(r.n_correct, r.n_judged);
  return r;
}

std::vector<TransitionRow> transition_table(const std::map<int, std::map<std::string, Status>>& eval_history,
                                            const std::set<std::string>* pool) {
  if (eval_history.size() < 2) fail(ErrorCode::validation, "transition_table needs at least two rounds");
  std::set<std::string> members;
  if (pool) {
    members = *pool;
  } else {
    for (const auto& [id, _] : eval_history.begin()->second) members.insert(id);
  }
  for (const auto& [round, row] : eval_history) {
    for (const auto& [id, _] : row) {
      if (!members.contains(id)) {
        fail(ErrorCode::validation, "evaluation pool differs between rounds", {{"round", round}, {"id", id}});
      }
    }
  }
  std::vector<TransitionRow> out;
  for (auto it = eval_history.begin(), nx = std::next(it); nx != eval_history.end(); ++it, ++nx) {
    TransitionRow row;
    row.from = it->first;
    row.to = nx->first;
    for (const auto& id : members) {
      const auto a = it->second.find(id), b = nx->second.find(id);
      if (a == it->second.end() || b == nx->second.end()) {
        ++row.excluded;
        continue;
      }
      const bool ca = a->second == Status::correct, cb = b->second == Status::correct;
      if (ca && cb) ++row.counts.correct_correct;
      else if (ca) ++row.counts.correct_incorrect;
      else if (cb) ++row.counts.incorrect_correct;
      else ++row.counts.incorrect_incorrect;
    }
    out.push_back(row);
  }
  return out;
}

TaxonomyLabel classify_error(const OrmVerdict& verdict) {
  if (verdict.status != Status::wrong) fail(ErrorCode::validation, "only WRONG verdicts can be classified",
                                            {{"id", verdict.problem_id}});
  const std::string text = lower(verdict.error_analysis);
  for (const auto& fam : families()) {
    for (auto w : fam.words)
      if (text.find(w) != std::string::npos) return fam.label;
  }
  return TaxonomyLabel::unclassified;
}

TaxonomyLabel classify_error(const OrmVerdict& verdict, ChatBackend& classifier) {
  if (verdict.status != Status::wrong) fail(ErrorCode::validation, "only WRONG verdicts can be classified",
                                            {{"id", verdict.problem_id}});
  PromptMessage msg;
  msg.parts.push_back({ContentPart::Kind::text,
                       "Classify the error described below into exactly one of these categories: reasoning, "
                       "question misunderstanding, knowledge, calculation, vision recognition.\n"
                       "Error step: " + verdict.error_step + "\nError analysis: " + verdict.error_analysis +
                       "\nAnswer with the category name only."});
  ChatRequest req;
  req.messages.push_back(std::move(msg));
  req.sampling = classifier.config().sampling;
  req.context.kind = JobKind::classify;
  req.context.verdict = &verdict;
  req.context.nonce = job_nonce(0, JobKind::classify, verdict.problem_id, verdict.round);
  const auto batch = run_batch(classifier, std::span<const ChatRequest>(&req, 1), JobKind::classify);
  if (!batch.outcomes[0].ok) return TaxonomyLabel::unclassified;
  const std::string reply = lower(batch.outcomes[0].payload);
  static const std::vector<std::pair<std::string_view, TaxonomyLabel>> names = {
      {"question misunderstanding", TaxonomyLabel::question_misunderstanding},
      {"vision recognition", TaxonomyLabel::vision_recognition},
      {"reasoning", TaxonomyLabel::reasoning},
      {"knowledge", TaxonomyLabel::knowledge},
      {"calculation", TaxonomyLabel::calculation},
      {"misunderstanding", TaxonomyLabel::question_misunderstanding},
      {"vision", TaxonomyLabel::vision_recognition}};
  std::size_t best = std::string::npos;
  TaxonomyLabel label = TaxonomyLabel::unclassified;
  for (const auto& [name, l] : names) {
    const auto pos = reply.find(name);
    if (pos < best) {
      best = pos;
      label = l;
    }
  }
  return label;
}

TaxonomyHistogram taxonomy_histogram(const std::vector<OrmVerdict>& verdicts) {
  TaxonomyHistogram h;
  for (auto l : kTaxonomyLabels) h[l] = 0;
  for (const auto& v : verdicts)
    if (v.status == Status::wrong) ++h[classify_error(v)];
  return h;
}

std::vector<RoundReport> round_reports(const std::filesystem::path& run_dir, std::string* source) {
  const auto [config, latest] = resume(run_dir);
  const auto replayed = replay_log(run_dir / "ledger.log", latest.log);
  const EvolutionLedger& l = replayed.ledger;
  std::vector<std::string> stages;
  for (const auto& e : l.history)
    if (e.event == kEventStageCommit && e.stage != "init" && e.stage != "final") stages.push_back(e.stage);
  if (stages.empty()) fail(ErrorCode::validation, "run has no committed stage", {{"run_dir", run_dir.string()}});

  const bool eval = !config.eval_corpus_path.empty();
  if (source) *source = eval ? "eval" : "training";
  std::vector<RoundReport> out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    RoundReport r;
    r.stage = stages[i];
    r.index = static_cast<int>(i);
    const auto file = run_dir / ("stage_" + stages[i]) / (eval ? "eval_verdicts.jsonl" : "verdicts.jsonl");
    std::vector<OrmVerdict> verdicts;
    for (const auto& rec : read_jsonl(file))
      if (rec.contains("verdict")) verdicts.push_back(rec["verdict"].get<OrmVerdict>());
    r.n_judged = static_cast<std::int64_t>(verdicts.size());
    for (const auto& v : verdicts) r.n_correct += v.status == Status::correct;
    if (r.n_judged > 0) r.accuracy = Fraction(r.n_correct, r.n_judged);
    r.taxonomy = taxonomy_histogram(verdicts);
    out.push_back(std::move(r));
  }
  if (eval && l.eval_outcomes.size() >= 2) {
    std::set<std::string> pool;
    for (const auto& [_, row] : l.eval_outcomes)
      for (const auto& [id, __] : row) pool.insert(id);
    for (const auto& row : transition_table(l.eval_outcomes, &pool)) {
      if (row.to >= 0 && static_cast<std::size_t>(row.to) < out.size()) out[row.to].transition = row;
    }
  }
  return out;
}

ReportFiles emit_report(const std::filesystem::path& run_dir) {
  ReportFiles files;
  files.rounds = round_reports(run_dir, &files.source);
  const auto [config, latest] = resume(run_dir);

  json rows = json::array(), transitions = json::array();
  std::ostringstream rounds_csv, transitions_csv, taxonomy_csv;
  rounds_csv << "stage,index,n_judged,n_correct,accuracy,accuracy_decimal,correct_correct,correct_incorrect,"
                "incorrect_correct,incorrect_incorrect";
  for (auto l : kTaxonomyLabels) rounds_csv << ',' << to_string(l);
  rounds_csv << '\n';
  transitions_csv << "from_stage,to_stage,correct_correct,correct_incorrect,incorrect_correct,incorrect_incorrect,"
                     "joint,excluded\n";
  taxonomy_csv << "stage,label,count,fraction,decimal\n";

  for (const auto& r : files.rounds) {
    json tax = json::object();
    std::int64_t classified = 0;
    for (const auto& [label, n] : r.taxonomy) {
      tax[std::string(to_string(label))] = n;
      classified += n;
    }
    json tr = nullptr;
    rounds_csv << r.stage << ',' << r.index << ',' << r.n_judged << ',' << r.n_correct << ','
               << csv_cell(r.accuracy, false) << ',' << csv_cell(r.accuracy, true);
    if (r.transition) {
      const auto& c = r.transition->counts;
      tr = {{"from_stage", files.rounds[r.transition->from].stage},
             {"to_stage", r.stage},
             {"correct_correct", c.correct_correct},
             {"correct_incorrect", c.correct_incorrect},
             {"incorrect_correct", c.incorrect_correct},
             {"incorrect_incorrect", c.incorrect_incorrect},
             {"joint", c.joint()},
             {"excluded", r.transition->excluded}};
      transitions.push_back(tr);
      rounds_csv << ',' << c.correct_correct << ',' << c.correct_incorrect << ',' << c.incorrect_correct << ','
                 << c.incorrect_incorrect;
      transitions_csv << tr["from_stage"].get<std::string>() << ',' << r.stage << ',' << c.correct_correct << ','
                      << c.correct_incorrect << ',' << c.incorrect_correct << ',' << c.incorrect_incorrect << ','
                      << c.joint() << ',' << r.transition->excluded << '\n';
    } else {
      rounds_csv << ",,,,";
    }
    for (auto l : kTaxonomyLabels) rounds_csv << ',' << r.taxonomy.at(l);
    rounds_csv << '\n';
    for (auto l : kTaxonomyLabels) {
      const auto n = r.taxonomy.at(l);
      std::optional<Fraction> share;
      if (classified > 0) share = Fraction(n, classified);
      taxonomy_csv << r.stage << ',' << to_string(l) << ',' << n << ',' << csv_cell(share, false) << ','
                   << csv_cell(share, true) << '\n';
    }
    rows.push_back({{"stage", r.stage},
                    {"index", r.index},
                    {"n_judged", r.n_judged},
                    {"n_correct", r.n_correct},
                    {"accuracy", fraction_json(r.accuracy)},
                    {"accuracy_decimal", decimal_json(r.accuracy)},
                    {"transition", tr},
                    {"taxonomy", tax}});
  }
  const json report = {{"run_id", latest.run_id},
                       {"config_digest", latest.config_digest},
                       {"source", files.source},
                       {"rows", rows},
                       {"transitions", transitions}};
  files.digests["report.json"] = write_file_atomic(run_dir / "report.json", report.dump(2) + "\n");
  files.digests["rounds.csv"] = write_file_atomic(run_dir / "rounds.csv", rounds_csv.str());
  files.digests["transitions.csv"] = write_file_atomic(run_dir / "transitions.csv", transitions_csv.str());
  files.digests["taxonomy.csv"] = write_file_atomic(run_dir / "taxonomy.csv", taxonomy_csv.str());
  return files;
}

}  // namespace evoforge
