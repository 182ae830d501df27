#include "evoforge/ledger.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <numeric>

#include "evoforge/digest.hpp"
#include "evoforge/error.hpp"

namespace evoforge {

void to_json(json& j, const LedgerEvent& e) {
  j = json{{"seq", e.seq},           {"event", e.event},   {"stage", e.stage},
           {"round", e.round},       {"problem_id", e.problem_id}, {"status", e.status},
           {"timestamp", e.timestamp}, {"payload", e.payload}};
}

void from_json(const json& j, LedgerEvent& e) {
  e.seq = j.at("seq").get<std::int64_t>();
  e.event = j.at("event").get<std::string>();
  e.stage = j.at("stage").get<std::string>();
  e.round = j.at("round").get<int>();
  e.problem_id = j.at("problem_id").get<std::string>();
  e.status = j.at("status").get<std::string>();
  e.timestamp = j.at("timestamp").get<std::string>();
  e.payload = j.at("payload");
}

std::string iso8601_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Clock& ledger_clock() {
  static Clock clock = iso8601_now;
  return clock;
}

json EvolutionLedger::state_json() const {
  json pool = json::array();
  for (const auto& e : incorrect_pool) pool.push_back({{"path", e.path}, {"verdict", e.verdict}});
  json records = json::array();
  for (const auto& r : sft_records) records.push_back({{"id", r.problem_id}, {"path", r.path}, {"verdict", r.verdict}});
  json evals = json::object();
  for (const auto& [idx, outcomes] : eval_outcomes) {
    json row = json::object();
    for (const auto& [id, s] : outcomes) row[id] = to_string(s);
    evals[std::to_string(idx)] = row;
  }
  return json{{"corpus_ids", corpus_ids},       {"seed_pool", seed_pool},
              {"sft_ids", sft_ids},             {"remain_ids", remain_ids},
              {"exhausted_ids", exhausted_ids}, {"reflected_ids", reflected_ids},
              {"incorrect_pool", pool},         {"sft_records", records},
              {"attempts", attempts},           {"eval_outcomes", evals},
              {"round_index", round_index},     {"max_attempts", max_attempts},
              {"seed_committed", seed_committed}};
}

std::string EvolutionLedger::state_digest() const { return sha256_hex(state_json().dump()); }

namespace {

using Batch = std::vector<std::pair<ReasoningPath, OrmVerdict>>;

LedgerEvent make_event(const EvolutionLedger& ledger, std::int64_t offset, std::string event, std::string stage,
                       int round, std::string problem_id = {}, std::string status = {},
                       json payload = json::object()) {
  LedgerEvent e;
  e.seq = static_cast<std::int64_t>(ledger.history.size()) + offset;
  e.event = std::move(event);
  e.stage = std::move(stage);
  e.round = round;
  e.problem_id = std::move(problem_id);
  e.status = std::move(status);
  e.timestamp = ledger_clock()();
  e.payload = std::move(payload);
  return e;
}

EvolutionLedger fold(const EvolutionLedger& ledger, const std::vector<LedgerEvent>& events) {
  EvolutionLedger next = ledger;
  for (const auto& e : events) apply_event(next, e);
  return next;
}

// Sorted by problem id; rejects duplicates, foreign verdicts and gating violations.
Batch sorted_batch(const Batch& batch, const char* what) {
  Batch sorted = batch;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.second.problem_id < b.second.problem_id; });
  std::vector<std::string> dups;
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i].second.problem_id == sorted[i - 1].second.problem_id) dups.push_back(sorted[i].second.problem_id);
  if (!dups.empty()) fail(ErrorCode::validation, std::string("duplicate problem ids in ") + what, {{"ids", dups}});
  for (const auto& [path, verdict] : sorted) {
    if (path.problem_id != verdict.problem_id) {
      fail(ErrorCode::validation, "path and verdict refer to different problems",
           {{"path", path.problem_id}, {"verdict", verdict.problem_id}});
    }
    if (auto v = verdict_violation(verdict); !v.empty()) {
      fail(ErrorCode::validation, v, {{"id", verdict.problem_id}});
    }
    if (verdict.status == Status::correct && !path.has_answer) {
      fail(ErrorCode::validation, "CORRECT verdict on an answerless path", {{"id", verdict.problem_id}});
    }
  }
  return sorted;
}

json pair_payload(const ReasoningPath& path, const OrmVerdict& verdict) {
  return json{{"path", path}, {"verdict", verdict}};
}

bool same_state(const EvolutionLedger& a, const EvolutionLedger& b) {
  auto same_entries = [](const auto& x, const auto& y) {
    return x.size() == y.size() && std::equal(x.begin(), x.end(), y.begin(), [](const auto& p, const auto& q) {
             return p.path == q.path && p.verdict == q.verdict;
           });
  };
  return a.corpus_ids == b.corpus_ids && a.seed_pool == b.seed_pool && a.sft_ids == b.sft_ids &&
         a.remain_ids == b.remain_ids && a.exhausted_ids == b.exhausted_ids && a.reflected_ids == b.reflected_ids &&
         same_entries(a.incorrect_pool, b.incorrect_pool) && same_entries(a.sft_records, b.sft_records) &&
         std::equal(a.sft_records.begin(), a.sft_records.end(), b.sft_records.begin(),
                    [](const SftRecord& p, const SftRecord& q) { return p.problem_id == q.problem_id; }) &&
         a.attempts == b.attempts && a.eval_outcomes == b.eval_outcomes && a.round_index == b.round_index &&
         a.max_attempts == b.max_attempts && a.seed_committed == b.seed_committed;
}

void require(bool ok, const LedgerEvent& e, const std::string& why) {
  if (!ok) {
    fail(ErrorCode::corruption, "ledger event cannot apply: " + why,
         {{"seq", e.seq}, {"event", e.event}, {"problem_id", e.problem_id}});
  }
}

}  // namespace

std::set<std::string> select_seed_pool(const std::vector<std::string>& ids, const Fraction& fraction,
                                       std::uint64_t rng_seed) {
  if (fraction <= Fraction(0, 1) || Fraction(1, 1) < fraction) {
    fail(ErrorCode::validation, "seed_fraction must be in (0, 1]", {{"seed_fraction", fraction.str()}});
  }
  std::vector<std::pair<std::uint64_t, std::string>> ranked;
  ranked.reserve(ids.size());
  for (const auto& id : ids) ranked.emplace_back(hash_combine(rng_seed, id), id);
  std::sort(ranked.begin(), ranked.end());
  const auto take = static_cast<std::size_t>(fraction.ceil_times(static_cast<std::int64_t>(ids.size())));
  std::set<std::string> pool;
  for (std::size_t i = 0; i < take && i < ranked.size(); ++i) pool.insert(ranked[i].second);
  return pool;
}

EvolutionLedger partition_init(const std::vector<Problem>& corpus, const Fraction& seed_fraction,
                               std::uint64_t rng_seed, int max_attempts) {
  if (corpus.empty()) fail(ErrorCode::validation, "empty corpus");
  if (max_attempts < 0) fail(ErrorCode::validation, "max_attempts must be >= 0");
  std::vector<std::string> ids;
  std::map<std::string, int> seen;
  for (const auto& p : corpus) {
    ids.push_back(p.id);
    ++seen[p.id];
  }
  std::vector<std::string> dups;
  for (const auto& [id, n] : seen)
    if (n > 1) dups.push_back(id);
  if (!dups.empty()) fail(ErrorCode::validation, "duplicate problem ids", {{"ids", dups}});

  const auto pool = select_seed_pool(ids, seed_fraction, rng_seed);
  EvolutionLedger empty;
  const std::set<std::string> corpus_ids(ids.begin(), ids.end());
  auto e = make_event(empty, 0, kEventPartition, "seed", 0, {}, {},
                      json{{"corpus_ids", corpus_ids},
                           {"seed_ids", pool},
                           {"max_attempts", max_attempts},
                           {"seed_fraction", seed_fraction.str()},
                           {"rng_seed", rng_seed}});
  return fold(empty, {e});
}

EvolutionLedger commit_seed(const EvolutionLedger& ledger, const Batch& verdicts) {
  if (ledger.seed_committed) fail(ErrorCode::stage_order, "seed stage already committed");
  if (ledger.corpus_ids.empty()) fail(ErrorCode::stage_order, "ledger not partitioned");
  const auto sorted = sorted_batch(verdicts, "seed batch");
  std::map<std::string, const std::pair<ReasoningPath, OrmVerdict>*> by_id;
  for (const auto& item : sorted) {
    if (!ledger.seed_pool.contains(item.second.problem_id)) {
      fail(ErrorCode::validation, "seed verdict for an id outside the seed pool", {{"id", item.second.problem_id}});
    }
    by_id[item.second.problem_id] = &item;
  }
  std::vector<LedgerEvent> events;
  std::int64_t off = 0;
  for (const auto& id : ledger.seed_pool) {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      events.push_back(make_event(ledger, off++, kEventSeedCommit, "seed", 0, id, "", json::object()));
    } else {
      const auto& [path, verdict] = *it->second;
      events.push_back(make_event(ledger, off++, kEventSeedCommit, "seed", 0, id,
                                  std::string(to_string(verdict.status)), pair_payload(path, verdict)));
    }
  }
  events.push_back(make_event(ledger, off++, kEventSeedClose, "seed", 0));
  return fold(ledger, events);
}

EvolutionLedger commit_round(const EvolutionLedger& ledger, const Batch& verdicts) {
  if (!ledger.seed_committed) fail(ErrorCode::stage_order, "round committed before the seed stage");
  const int round = ledger.round_index + 1;
  const auto sorted = sorted_batch(verdicts, "round batch");
  for (const auto& [path, verdict] : sorted) {
    if (!ledger.remain_ids.contains(verdict.problem_id)) {
      fail(ErrorCode::validation, "verdict for an id not in remain_ids", {{"id", verdict.problem_id}});
    }
    if (verdict.round != round) {
      fail(ErrorCode::validation, "verdict round does not match the round being committed",
           {{"id", verdict.problem_id}, {"verdict_round", verdict.round}, {"round", round}});
    }
  }
  const std::string stage = Stage::evolve(round).label();
  std::vector<LedgerEvent> events;
  std::int64_t off = 0;
  for (const auto& [path, verdict] : sorted) {
    events.push_back(make_event(ledger, off++, kEventCommit, stage, round, verdict.problem_id,
                                std::string(to_string(verdict.status)), pair_payload(path, verdict)));
  }
  if (ledger.max_attempts > 0) {
    for (const auto& [path, verdict] : sorted) {
      const auto it = ledger.attempts.find(verdict.problem_id);
      const int tried = (it == ledger.attempts.end() ? 0 : it->second) + 1;
      if (verdict.status == Status::wrong && tried >= ledger.max_attempts &&
          !ledger.exhausted_ids.contains(verdict.problem_id)) {
        events.push_back(make_event(ledger, off++, kEventExhausted, stage, round, verdict.problem_id));
      }
    }
  }
  events.push_back(make_event(ledger, off++, kEventRoundClose, stage, round));
  return fold(ledger, events);
}

std::vector<IncorrectEntry> reflection_candidates(const EvolutionLedger& ledger) {
  std::map<std::string, const IncorrectEntry*> latest;
  for (const auto& e : ledger.incorrect_pool) latest[e.path.problem_id] = &e;
  std::vector<IncorrectEntry> out;
  for (const auto& [id, entry] : latest) {
    if (ledger.sft_ids.contains(id) || ledger.reflected_ids.contains(id)) continue;
    out.push_back(*entry);
  }
  return out;
}

EvolutionLedger commit_reflection(const EvolutionLedger& ledger, const Batch& reflected, int after_round) {
  if (!ledger.seed_committed) fail(ErrorCode::stage_order, "reflection committed before the seed stage");
  const auto sorted = sorted_batch(reflected, "reflection batch");
  std::set<std::string> seen_incorrect;
  for (const auto& e : ledger.incorrect_pool) seen_incorrect.insert(e.path.problem_id);
  for (const auto& [path, verdict] : sorted) {
    if (!seen_incorrect.contains(verdict.problem_id)) {
      fail(ErrorCode::validation, "reflection for a problem never judged incorrect", {{"id", verdict.problem_id}});
    }
    if (path.producer != Producer::reflector) {
      fail(ErrorCode::validation, "reflected path must come from the reflector", {{"id", verdict.problem_id}});
    }
  }
  const std::string stage = Stage::reflection(after_round).label();
  std::vector<LedgerEvent> events;
  std::int64_t off = 0;
  for (const auto& [path, verdict] : sorted) {
    if (ledger.sft_ids.contains(verdict.problem_id)) {
      events.push_back(make_event(ledger, off++, kEventReflectionSkip, stage, after_round, verdict.problem_id, "",
                                  json{{"reason", "already in sft_ids"}}));
      continue;
    }
    events.push_back(make_event(ledger, off++, kEventReflection, stage, after_round, verdict.problem_id,
                                std::string(to_string(verdict.status)), pair_payload(path, verdict)));
  }
  events.push_back(make_event(ledger, off++, kEventReflectionClose, stage, after_round));
  return fold(ledger, events);
}

EvolutionLedger record_eval(const EvolutionLedger& ledger, int eval_index, const std::string& stage_label,
                            const std::vector<OrmVerdict>& verdicts) {
  if (ledger.eval_outcomes.contains(eval_index)) {
    fail(ErrorCode::validation, "eval index already recorded", {{"eval_index", eval_index}});
  }
  std::vector<OrmVerdict> sorted = verdicts;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.problem_id < b.problem_id; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i].problem_id == sorted[i - 1].problem_id) {
      fail(ErrorCode::validation, "duplicate eval verdict", {{"id", sorted[i].problem_id}});
    }
  }
  std::vector<LedgerEvent> events;
  std::int64_t off = 0;
  for (const auto& v : sorted) {
    events.push_back(make_event(ledger, off++, kEventEval, stage_label, eval_index, v.problem_id,
                                std::string(to_string(v.status)), json{{"verdict", v}}));
  }
  if (events.empty()) {
    // An empty pool still marks the index as recorded.
    events.push_back(make_event(ledger, off++, kEventEval, stage_label, eval_index));
  }
  return fold(ledger, events);
}

EvolutionLedger mark_stage(const EvolutionLedger& ledger, const std::string& stage_label, json payload) {
  return fold(ledger, {make_event(ledger, 0, kEventStageCommit, stage_label, ledger.round_index, {}, {},
                                  std::move(payload))});
}

void apply_event(EvolutionLedger& l, const LedgerEvent& e) {
  require(e.seq == static_cast<std::int64_t>(l.history.size()), e, "sequence gap");
  const std::string& id = e.problem_id;
  if (e.event == kEventPartition) {
    require(l.history.empty(), e, "partition must be the first event");
    for (const auto& cid : e.payload.at("corpus_ids")) l.corpus_ids.insert(cid.get<std::string>());
    for (const auto& sid : e.payload.at("seed_ids")) l.seed_pool.insert(sid.get<std::string>());
    l.max_attempts = e.payload.at("max_attempts").get<int>();
    for (const auto& cid : l.corpus_ids)
      if (!l.seed_pool.contains(cid)) l.remain_ids.insert(cid);
  } else if (e.event == kEventSeedCommit) {
    require(l.seed_pool.erase(id) == 1, e, "id not in seed pool");
    if (e.status == "CORRECT") {
      auto path = e.payload.at("path").get<ReasoningPath>();
      auto verdict = e.payload.at("verdict").get<OrmVerdict>();
      l.sft_ids.insert(id);
      l.sft_records.push_back({id, std::move(path), std::move(verdict)});
    } else {
      l.remain_ids.insert(id);
    }
  } else if (e.event == kEventSeedClose) {
    require(l.seed_pool.empty() && !l.seed_committed, e, "seed close with pending seed ids");
    l.seed_committed = true;
  } else if (e.event == kEventCommit) {
    require(l.remain_ids.contains(id), e, "id not in remain_ids");
    auto path = e.payload.at("path").get<ReasoningPath>();
    auto verdict = e.payload.at("verdict").get<OrmVerdict>();
    ++l.attempts[id];
    if (e.status == "CORRECT") {
      l.remain_ids.erase(id);
      l.exhausted_ids.erase(id);
      l.sft_ids.insert(id);
      l.sft_records.push_back({id, std::move(path), std::move(verdict)});
    } else {
      l.incorrect_pool.push_back({std::move(path), std::move(verdict)});
    }
  } else if (e.event == kEventExhausted) {
    require(l.remain_ids.contains(id), e, "exhausted id not in remain_ids");
    l.exhausted_ids.insert(id);
  } else if (e.event == kEventRoundClose) {
    require(e.round == l.round_index + 1, e, "round close out of order");
    l.round_index = e.round;
  } else if (e.event == kEventReflection) {
    require(!l.sft_ids.contains(id), e, "reflection for an id already in sft_ids");
    l.reflected_ids.insert(id);
    if (e.status == "CORRECT") {
      auto path = e.payload.at("path").get<ReasoningPath>();
      auto verdict = e.payload.at("verdict").get<OrmVerdict>();
      l.remain_ids.erase(id);
      l.exhausted_ids.erase(id);
      l.sft_ids.insert(id);
      l.sft_records.push_back({id, std::move(path), std::move(verdict)});
    }
  } else if (e.event == kEventEval) {
    auto& row = l.eval_outcomes[e.round];
    if (!id.empty()) row[id] = parse_status(e.status);
  } else if (e.event != kEventReflectionSkip && e.event != kEventReflectionClose && e.event != kEventStageCommit) {
    require(false, e, "unknown event type");
  }
  l.history.push_back(e);
}

EvolutionLedger replay(const std::vector<LedgerEvent>& history) {
  EvolutionLedger l;
  for (const auto& e : history) apply_event(l, e);
  return l;
}

std::vector<Violation> check_invariants(const EvolutionLedger& l) {
  std::vector<Violation> out;
  auto intersect = [](const std::set<std::string>& a, const std::set<std::string>& b) {
    std::vector<std::string> both;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
    return both;
  };
  for (const auto& [name, other] : {std::pair{"remain_ids", &l.remain_ids}, std::pair{"seed_pool", &l.seed_pool}}) {
    if (auto both = intersect(l.sft_ids, *other); !both.empty()) {
      out.push_back({"disjointness", "sft_ids and " + std::string(name) + " share " + json(both).dump()});
    }
  }
  if (auto both = intersect(l.remain_ids, l.seed_pool); !both.empty()) {
    out.push_back({"disjointness", "remain_ids and seed_pool share " + json(both).dump()});
  }

  std::set<std::string> covered = l.sft_ids;
  covered.insert(l.remain_ids.begin(), l.remain_ids.end());
  covered.insert(l.seed_pool.begin(), l.seed_pool.end());
  if (covered != l.corpus_ids) out.push_back({"conservation", "sft ∪ remain ∪ seed_pool differs from corpus_ids"});
  if (l.seed_committed && !l.seed_pool.empty()) out.push_back({"conservation", "seed pool pending after seed commit"});
  for (const auto& id : l.exhausted_ids)
    if (!l.remain_ids.contains(id)) out.push_back({"conservation", "exhausted id outside remain_ids: " + id});

  std::set<std::string> record_ids;
  for (const auto& r : l.sft_records) {
    if (!record_ids.insert(r.problem_id).second) out.push_back({"verdict-gating", "duplicate sft record " + r.problem_id});
    if (r.verdict.status != Status::correct || r.verdict.problem_id != r.problem_id || !r.path.has_answer) {
      out.push_back({"verdict-gating", "sft record without a CORRECT verdict: " + r.problem_id});
    }
  }
  if (record_ids != l.sft_ids) out.push_back({"verdict-gating", "sft_records do not match sft_ids"});
  for (const auto& e : l.incorrect_pool) {
    if (e.verdict.status != Status::wrong || !verdict_violation(e.verdict).empty()) {
      out.push_back({"verdict-gating", "incorrect pool entry without a valid WRONG verdict: " + e.path.problem_id});
    }
  }

  // Replay the log, checking monotonicity at each committed boundary.
  try {
    EvolutionLedger r;
    std::optional<std::size_t> last_sft, last_remain;
    for (const auto& e : l.history) {
      apply_event(r, e);
      const bool boundary = e.event == kEventSeedClose || e.event == kEventRoundClose || e.event == kEventReflectionClose;
      if (!boundary) continue;
      if (last_sft && r.sft_ids.size() < *last_sft) {
        out.push_back({"monotonicity", "sft_ids shrank at seq " + std::to_string(e.seq)});
      }
      if (last_remain && r.remain_ids.size() > *last_remain) {
        out.push_back({"monotonicity", "remain_ids grew at seq " + std::to_string(e.seq)});
      }
      last_sft = r.sft_ids.size();
      last_remain = r.remain_ids.size();
    }
    if (!same_state(r, l)) out.push_back({"replay", "replayed history differs from materialized state"});
  } catch (const Error& err) {
    out.push_back({"replay", err.what()});
  }
  return out;
}

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::correct: return "correct";
    case Outcome::incorrect: return "incorrect";
    case Outcome::unattempted: return "unattempted";
  }
  return "unattempted";
}

TransitionReport transitions(const EvolutionLedger& l, int from_round, int to_round, TransitionSource source) {
  std::map<std::string, Status> from, to;
  if (source == TransitionSource::evaluation) {
    const auto f = l.eval_outcomes.find(from_round);
    const auto t = l.eval_outcomes.find(to_round);
    if (f == l.eval_outcomes.end() || t == l.eval_outcomes.end()) {
      fail(ErrorCode::validation, "eval round not committed", {{"from", from_round}, {"to", to_round}});
    }
    from = f->second;
    to = t->second;
  } else {
    auto committed = [&](int r) { return r == 0 ? l.seed_committed : (r >= 1 && r <= l.round_index); };
    if (!committed(from_round) || !committed(to_round)) {
      fail(ErrorCode::validation, "round not committed", {{"from", from_round}, {"to", to_round}});
    }
    for (const auto& e : l.history) {
      const bool seed = e.event == kEventSeedCommit && !e.status.empty();
      if (!(seed || e.event == kEventCommit)) continue;
      const int r = seed ? 0 : e.round;
      if (r == from_round) from[e.problem_id] = parse_status(e.status);
      if (r == to_round) to[e.problem_id] = parse_status(e.status);
    }
  }
  auto outcome = [](Status s) { return s == Status::correct ? Outcome::correct : Outcome::incorrect; };
  TransitionReport rep;
  std::set<std::string> ids;
  for (const auto& [id, _] : from) ids.insert(id);
  for (const auto& [id, _] : to) ids.insert(id);
  for (const auto& id : ids) {
    const auto f = from.find(id);
    const auto t = to.find(id);
    TransitionRecord rec{id, from_round, to_round, f == from.end() ? Outcome::unattempted : outcome(f->second),
                         t == to.end() ? Outcome::unattempted : outcome(t->second)};
    auto& c = rep.counts;
    if (rec.from_status == Outcome::unattempted) {
      ++c.only_to;
    } else if (rec.to_status == Outcome::unattempted) {
      ++c.only_from;
    } else if (rec.from_status == Outcome::correct) {
      ++(rec.to_status == Outcome::correct ? c.correct_correct : c.correct_incorrect);
    } else {
      ++(rec.to_status == Outcome::correct ? c.incorrect_correct : c.incorrect_incorrect);
    }
    rep.records.push_back(rec);
  }
  return rep;
}

}  // namespace evoforge
