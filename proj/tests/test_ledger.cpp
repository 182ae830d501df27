#include <gtest/gtest.h>

#include <algorithm>
#include <queue>
#include <random>

#include "evoforge/digest.hpp"
#include "evoforge/error.hpp"
#include "evoforge/ledger.hpp"

using namespace evoforge;

namespace {

std::vector<Problem> make_corpus(int n) {
  std::vector<Problem> out;
  for (int i = 0; i < n; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "q%04d", i);
    out.push_back({id, "question " + std::to_string(i), {}, "a" + std::to_string(i), json::object()});
  }
  return out;
}

std::pair<ReasoningPath, OrmVerdict> judged(const std::string& id, Status status, int round,
                                            Producer producer = Producer::student) {
  ReasoningPath p;
  p.problem_id = id;
  p.raw_text = "Step 1: work.\nThe answer to this problem is " + id + ".";
  p.steps = split_steps(p.raw_text);
  p.final_answer = id;
  p.has_answer = true;
  p.producer = producer;
  p.stage = producer == Producer::reflector ? Stage::reflection(round) : Stage::evolve(round);
  OrmVerdict v;
  v.problem_id = id;
  v.status = status;
  v.round = round;
  v.judge_tag = "test-judge";
  if (status == Status::wrong) {
    v.error_step = "Step 1";
    v.error_analysis = "The reasoning does not follow.";
  }
  return {p, v};
}

// Seed stage with every seed problem solved by the teacher.
EvolutionLedger seeded(const std::vector<Problem>& corpus, const Fraction& f, std::uint64_t seed) {
  auto l = partition_init(corpus, f, seed);
  std::vector<std::pair<ReasoningPath, OrmVerdict>> batch;
  for (const auto& id : l.seed_pool) {
    auto item = judged(id, Status::correct, 0, Producer::teacher);
    item.first.stage = Stage::seed();
    batch.push_back(item);
  }
  return commit_seed(l, batch);
}

std::size_t count_rule(const std::vector<Violation>& vs, const std::string& rule) {
  return static_cast<std::size_t>(std::count_if(vs.begin(), vs.end(), [&](const auto& v) { return v.rule == rule; }));
}

}  // namespace

TEST(PartitionInit, SeededSelectionMatchesIndependentRerun) {
  const auto corpus = make_corpus(10);
  const auto l = partition_init(corpus, Fraction::parse("0.3"), 7);
  EXPECT_EQ(l.seed_pool.size(), 3u);
  EXPECT_EQ(l.remain_ids.size(), 7u);
  EXPECT_EQ(l.round_index, 0);
  ASSERT_EQ(l.history.size(), 1u);
  EXPECT_EQ(l.history[0].event, "seed-partition");

  // Oracle: a max-heap of size 3 over the seeded hash ranks.
  std::priority_queue<std::pair<std::uint64_t, std::string>> heap;
  for (const auto& p : corpus) {
    heap.emplace(hash_combine(7, p.id), p.id);
    if (heap.size() > 3) heap.pop();
  }
  std::set<std::string> expected;
  while (!heap.empty()) {
    expected.insert(heap.top().second);
    heap.pop();
  }
  EXPECT_EQ(l.seed_pool, expected);
  for (const auto& id : l.seed_pool) EXPECT_FALSE(l.remain_ids.contains(id));

  EXPECT_EQ(partition_init(corpus, Fraction::parse("0.3"), 7).seed_pool, l.seed_pool);
  EXPECT_NE(partition_init(corpus, Fraction::parse("0.3"), 8).seed_pool, l.seed_pool);
}

TEST(PartitionInit, FullFraction) {
  const auto l = partition_init(make_corpus(5), Fraction(1, 1), 1);
  EXPECT_EQ(l.seed_pool.size(), 5u);
  EXPECT_TRUE(l.remain_ids.empty());
}

TEST(PartitionInit, StagingShare) {
  // 100K of 280K: 5/14 of the final record count.
  const auto l = partition_init(make_corpus(2800), Fraction(5, 14), 3);
  EXPECT_EQ(l.seed_pool.size(), 1000u);
}

TEST(PartitionInit, Rejections) {
  auto corpus = make_corpus(4);
  corpus.push_back(corpus[1]);
  corpus.push_back(corpus[2]);
  try {
    partition_init(corpus, Fraction(1, 2), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::validation);
    EXPECT_EQ(e.detail()["ids"], json({"q0001", "q0002"}));
  }
  EXPECT_THROW(partition_init({}, Fraction(1, 2), 1), Error);
  EXPECT_THROW(partition_init(make_corpus(3), Fraction(0, 1), 1), Error);
  EXPECT_THROW(partition_init(make_corpus(3), Fraction(3, 2), 1), Error);
}

TEST(CommitSeed, FailuresReturnToRemainAndAreNotReflected) {
  auto l = partition_init(make_corpus(10), Fraction(1, 2), 4);
  std::vector<std::pair<ReasoningPath, OrmVerdict>> batch;
  int i = 0;
  std::string failed;
  for (const auto& id : l.seed_pool) {
    auto item = judged(id, i++ == 0 ? Status::wrong : Status::correct, 0, Producer::teacher);
    if (item.second.status == Status::wrong) failed = id;
    if (i < 5) batch.push_back(item);  // last seed id never judged
  }
  l = commit_seed(l, batch);
  EXPECT_EQ(l.sft_ids.size(), 3u);
  EXPECT_EQ(l.remain_ids.size(), 7u);
  EXPECT_TRUE(l.remain_ids.contains(failed));
  EXPECT_TRUE(l.incorrect_pool.empty());
  EXPECT_TRUE(l.seed_pool.empty());
  EXPECT_TRUE(check_invariants(l).empty());
  EXPECT_THROW(commit_seed(l, {}), Error);
}

TEST(CommitRound, HandAppliedSetRules) {
  // corpus {a,b,c,s}; s is the seed pool.
  std::vector<Problem> corpus = {{"a", "qa", {}, "1", {}}, {"b", "qb", {}, "1", {}}, {"c", "qc", {}, "1", {}}, {"s", "qs", {}, "1", {}}};
  auto l = partition_init(corpus, Fraction(1, 4), 0);
  const std::string seed_id = *l.seed_pool.begin();
  auto seed_item = judged(seed_id, Status::correct, 0, Producer::teacher);
  l = commit_seed(l, {seed_item});
  ASSERT_EQ(l.remain_ids.size(), 3u);
  std::vector<std::string> remain(l.remain_ids.begin(), l.remain_ids.end());

  auto next = commit_round(l, {judged(remain[1], Status::wrong, 1), judged(remain[0], Status::correct, 1)});
  EXPECT_TRUE(next.sft_ids.contains(remain[0]));
  EXPECT_EQ(next.remain_ids, (std::set<std::string>{remain[1], remain[2]}));
  ASSERT_EQ(next.incorrect_pool.size(), 1u);
  EXPECT_EQ(next.incorrect_pool[0].path.problem_id, remain[1]);
  EXPECT_EQ(next.round_index, 1);
  EXPECT_TRUE(check_invariants(next).empty());

  // commit applies in ascending id order regardless of arrival order
  std::vector<std::string> committed;
  for (const auto& e : next.history)
    if (e.event == "commit") committed.push_back(e.problem_id);
  EXPECT_TRUE(std::is_sorted(committed.begin(), committed.end()));
}

TEST(CommitRound, EmptyBatchOnlyAdvancesRound) {
  const auto l = seeded(make_corpus(6), Fraction(1, 3), 2);
  const auto next = commit_round(l, {});
  EXPECT_EQ(next.round_index, l.round_index + 1);
  EXPECT_EQ(next.sft_ids, l.sft_ids);
  EXPECT_EQ(next.remain_ids, l.remain_ids);
  EXPECT_EQ(next.incorrect_pool.size(), l.incorrect_pool.size());
}

TEST(CommitRound, RejectionsLeaveLedgerUntouched) {
  const auto l = seeded(make_corpus(6), Fraction(1, 3), 2);
  const std::string in_remain = *l.remain_ids.begin();
  const std::string in_sft = *l.sft_ids.begin();
  const auto digest = l.state_digest();
  EXPECT_THROW(commit_round(l, {judged(in_sft, Status::correct, 1)}), Error);
  EXPECT_THROW(commit_round(l, {judged(in_remain, Status::correct, 1), judged(in_remain, Status::wrong, 1)}), Error);
  EXPECT_THROW(commit_round(l, {judged(in_remain, Status::correct, 2)}), Error);
  auto bad = judged(in_remain, Status::wrong, 1);
  bad.second.error_analysis.clear();
  EXPECT_THROW(commit_round(l, {bad}), Error);
  EXPECT_EQ(l.state_digest(), digest);
  EXPECT_THROW(commit_round(partition_init(make_corpus(3), Fraction(1, 3), 1), {}), Error);
}

TEST(CommitRound, ConservationOverThreeRoundsOnTwoThousand) {
  std::mt19937 rng(99);
  auto l = seeded(make_corpus(2000), Fraction(3, 10), 5);
  for (int round = 1; round <= 3; ++round) {
    std::vector<std::pair<ReasoningPath, OrmVerdict>> batch;
    for (const auto& id : l.remain_ids) batch.push_back(judged(id, rng() % 3 == 0 ? Status::correct : Status::wrong, round));
    l = commit_round(l, batch);
  }
  // Replay the full history and check conservation at every close event.
  EvolutionLedger r;
  for (const auto& e : l.history) {
    apply_event(r, e);
    if (e.event == "seed-close" || e.event == "round-close") EXPECT_EQ(r.sft_ids.size() + r.remain_ids.size(), 2000u);
  }
  EXPECT_TRUE(check_invariants(l).empty());
}

TEST(CommitRound, MaxAttemptsParksExhaustedProblems) {
  auto l = partition_init(make_corpus(4), Fraction(1, 4), 1, /*max_attempts=*/2);
  l = commit_seed(l, {judged(*l.seed_pool.begin(), Status::correct, 0, Producer::teacher)});
  const std::string id = *l.remain_ids.begin();
  l = commit_round(l, {judged(id, Status::wrong, 1)});
  EXPECT_FALSE(l.exhausted_ids.contains(id));
  l = commit_round(l, {judged(id, Status::wrong, 2)});
  EXPECT_TRUE(l.exhausted_ids.contains(id));
  EXPECT_TRUE(l.remain_ids.contains(id));
  EXPECT_TRUE(check_invariants(l).empty());
}

TEST(CommitReflection, CorrectReflectionEntersSft) {
  auto l = seeded(make_corpus(6), Fraction(1, 3), 2);
  const std::string b = *l.remain_ids.begin();
  l = commit_round(l, {judged(b, Status::wrong, 1)});
  const auto candidates = reflection_candidates(l);
  ASSERT_EQ(candidates.size(), 1u);
  auto next = commit_reflection(l, {judged(b, Status::correct, 1, Producer::reflector)}, 1);
  EXPECT_TRUE(next.sft_ids.contains(b));
  EXPECT_FALSE(next.remain_ids.contains(b));
  EXPECT_EQ(next.history.back().event, "reflection-close");
  EXPECT_TRUE(check_invariants(next).empty());
  EXPECT_TRUE(reflection_candidates(next).empty());
}

TEST(CommitReflection, WrongReflectionLoggedNotRetried) {
  auto l = seeded(make_corpus(6), Fraction(1, 3), 2);
  const std::string b = *l.remain_ids.begin();
  l = commit_round(l, {judged(b, Status::wrong, 1)});
  auto next = commit_reflection(l, {judged(b, Status::wrong, 1, Producer::reflector)}, 1);
  EXPECT_EQ(next.sft_ids, l.sft_ids);
  EXPECT_EQ(next.remain_ids, l.remain_ids);
  EXPECT_TRUE(next.reflected_ids.contains(b));
  EXPECT_TRUE(reflection_candidates(next).empty());
}

TEST(CommitReflection, Rejections) {
  auto l = seeded(make_corpus(6), Fraction(1, 3), 2);
  const std::string b = *l.remain_ids.begin();
  const std::string never = *std::next(l.remain_ids.begin());
  l = commit_round(l, {judged(b, Status::wrong, 1)});
  EXPECT_THROW(commit_reflection(l, {judged(never, Status::correct, 1, Producer::reflector)}, 1), Error);
  EXPECT_THROW(commit_reflection(l, {judged(b, Status::correct, 1, Producer::student)}, 1), Error);
}

TEST(CommitReflection, AlreadySolvedProblemIsSkippedWithWarning) {
  auto l = seeded(make_corpus(6), Fraction(1, 3), 2);
  const std::string b = *l.remain_ids.begin();
  l = commit_round(l, {judged(b, Status::wrong, 1)});
  l = commit_round(l, {judged(b, Status::correct, 2)});
  EXPECT_TRUE(reflection_candidates(l).empty());
  const auto next = commit_reflection(l, {judged(b, Status::correct, 2, Producer::reflector)}, 2);
  EXPECT_EQ(next.sft_records.size(), l.sft_records.size());
  EXPECT_EQ(next.history[next.history.size() - 2].event, "reflection-skip");
  EXPECT_TRUE(check_invariants(next).empty());
}

TEST(ReflectionCandidates, LatestWrongPathPerProblem) {
  auto l = seeded(make_corpus(6), Fraction(1, 3), 2);
  const std::string b = *l.remain_ids.begin();
  l = commit_round(l, {judged(b, Status::wrong, 1)});
  l = commit_round(l, {judged(b, Status::wrong, 2)});
  const auto c = reflection_candidates(l);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].verdict.round, 2);
}

TEST(CheckInvariants, FreshLedgerIsHealthy) {
  EXPECT_TRUE(check_invariants(partition_init(make_corpus(10), Fraction(1, 2), 3)).empty());
}

TEST(CheckInvariants, CorruptedFixtureReportsDisjointness) {
  auto l = seeded(make_corpus(10), Fraction(1, 2), 3);
  l.sft_ids.insert(*l.remain_ids.begin());
  const auto report = check_invariants(l);
  EXPECT_EQ(count_rule(report, "disjointness"), 1u);
  EXPECT_EQ(count_rule(report, "replay"), 1u);
}

TEST(CheckInvariants, DetectsGatingAndReplayCorruption) {
  auto l = seeded(make_corpus(10), Fraction(1, 2), 3);
  l = commit_round(l, {judged(*l.remain_ids.begin(), Status::wrong, 1)});
  l.incorrect_pool[0].verdict.error_step.clear();
  EXPECT_GE(count_rule(check_invariants(l), "verdict-gating"), 1u);

  auto m = seeded(make_corpus(10), Fraction(1, 2), 3);
  m.history[1].status = "WRONG";  // tampered seed commit
  EXPECT_GE(count_rule(check_invariants(m), "replay"), 1u);
}

TEST(Replay, ReproducesStateAndSerializesEvents) {
  auto l = seeded(make_corpus(20), Fraction(1, 4), 8);
  std::vector<std::pair<ReasoningPath, OrmVerdict>> batch;
  int k = 0;
  for (const auto& id : l.remain_ids) batch.push_back(judged(id, (k++ % 2) ? Status::correct : Status::wrong, 1));
  l = commit_round(l, batch);
  std::vector<LedgerEvent> reparsed;
  for (const auto& e : l.history) reparsed.push_back(json::parse(json(e).dump()).get<LedgerEvent>());
  EXPECT_EQ(reparsed, l.history);
  EXPECT_EQ(replay(reparsed).state_digest(), l.state_digest());

  auto gap = l.history;
  gap.erase(gap.begin() + 3);
  EXPECT_THROW(replay(gap), Error);
}

TEST(Transitions, EvaluationCountsAndClosure) {
  auto l = seeded(make_corpus(4), Fraction(1, 2), 1);
  auto v = [](const std::string& id, Status s) {
    OrmVerdict o;
    o.problem_id = id;
    o.status = s;
    if (s == Status::wrong) {
      o.error_step = "Step 1";
      o.error_analysis = "bad";
    }
    return o;
  };
  l = record_eval(l, 0, "seed", {v("e1", Status::correct), v("e2", Status::wrong), v("e3", Status::correct), v("e4", Status::wrong)});
  l = record_eval(l, 1, "round-1", {v("e1", Status::correct), v("e2", Status::correct), v("e3", Status::wrong), v("e5", Status::wrong)});
  const auto rep = transitions(l, 0, 1);
  EXPECT_EQ(rep.counts.correct_correct, 1);
  EXPECT_EQ(rep.counts.incorrect_correct, 1);
  EXPECT_EQ(rep.counts.correct_incorrect, 1);
  EXPECT_EQ(rep.counts.incorrect_incorrect, 0);
  EXPECT_EQ(rep.counts.only_from, 1);
  EXPECT_EQ(rep.counts.only_to, 1);
  EXPECT_EQ(rep.counts.joint(), 3);
  EXPECT_EQ(rep.records.size(), 5u);
  EXPECT_THROW(transitions(l, 1, 2), Error);
  EXPECT_THROW(record_eval(l, 1, "round-1", {}), Error);
  EXPECT_TRUE(check_invariants(l).empty());
}

TEST(Transitions, TrainingSourceUsesCommitHistory) {
  auto l = seeded(make_corpus(8), Fraction(1, 4), 1);
  std::vector<std::string> remain(l.remain_ids.begin(), l.remain_ids.end());
  l = commit_round(l, {judged(remain[0], Status::wrong, 1), judged(remain[1], Status::wrong, 1)});
  l = commit_round(l, {judged(remain[0], Status::correct, 2), judged(remain[1], Status::wrong, 2), judged(remain[2], Status::wrong, 2)});
  const auto rep = transitions(l, 1, 2, TransitionSource::training);
  EXPECT_EQ(rep.counts.incorrect_correct, 1);
  EXPECT_EQ(rep.counts.incorrect_incorrect, 1);
  EXPECT_EQ(rep.counts.only_to, 1);
  EXPECT_THROW(transitions(l, 2, 3, TransitionSource::training), Error);
}
