#include "evoforge/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <regex>
#include <thread>

#include "evoforge/digest.hpp"
#include "evoforge/error.hpp"

namespace evoforge {

using namespace std::chrono;

void BackendConfig::validate() const {
  auto bad = [&](const std::string& what) { fail(ErrorCode::validation, "backend config: " + what, {{"tag", tag}}); };
  if (tag.empty()) bad("empty tag");
  static const std::regex kEndpoint(R"(^(https?://[A-Za-z0-9.\-]+(:[0-9]{1,5})?(/[^\s]*)?|(mock|sim)://[a-z0-9\-]+(\?[^\s]*)?)$)");
  if (!std::regex_match(endpoint, kEndpoint)) bad("malformed endpoint '" + endpoint + "'");
  if (!(sampling.temperature >= 0.0)) bad("temperature must be >= 0");
  if (sampling.max_tokens <= 0) bad("max_tokens must be > 0");
  if (timeout <= milliseconds::zero()) bad("timeout must be > 0");
  if (retry.max_attempts < 1) bad("retry.max_attempts must be >= 1");
  if (retry.base_backoff < milliseconds::zero()) bad("retry.base_backoff must be >= 0");
  if (!(retry.backoff_factor > 1.0)) bad("retry.backoff_factor must be > 1");
  if (concurrency_limit < 1) bad("concurrency_limit must be >= 1");
}

void to_json(json& j, const BackendConfig& c) {
  j = json{{"tag", c.tag},
           {"endpoint", c.endpoint},
           {"model_name", c.model_name},
           {"auth_env", c.auth_env},
           {"temperature", c.sampling.temperature},
           {"max_tokens", c.sampling.max_tokens},
           {"timeout_ms", c.timeout.count()},
           {"retry",
            {{"max_attempts", c.retry.max_attempts},
             {"base_backoff_ms", c.retry.base_backoff.count()},
             {"backoff_factor", c.retry.backoff_factor}}},
           {"concurrency_limit", c.concurrency_limit}};
}

void from_json(const json& j, BackendConfig& c) {
  const BackendConfig d;
  c.tag = j.at("tag").get<std::string>();
  c.endpoint = j.at("endpoint").get<std::string>();
  c.model_name = j.value("model_name", "");
  c.auth_env = j.value("auth_env", "");
  c.sampling.temperature = j.value("temperature", d.sampling.temperature);
  c.sampling.max_tokens = j.value("max_tokens", d.sampling.max_tokens);
  c.timeout = milliseconds(j.value("timeout_ms", static_cast<std::int64_t>(d.timeout.count())));
  const json retry = j.value("retry", json::object());
  c.retry.max_attempts = retry.value("max_attempts", d.retry.max_attempts);
  c.retry.base_backoff = milliseconds(retry.value("base_backoff_ms", static_cast<std::int64_t>(d.retry.base_backoff.count())));
  c.retry.backoff_factor = retry.value("backoff_factor", d.retry.backoff_factor);
  c.concurrency_limit = j.value("concurrency_limit", d.concurrency_limit);
}

std::string_view to_string(JobKind kind) {
  switch (kind) {
    case JobKind::generate: return "generate";
    case JobKind::judge: return "judge";
    case JobKind::reflect: return "reflect";
    case JobKind::annotate: return "annotate";
    case JobKind::classify: return "classify";
  }
  return "generate";
}

std::string_view to_string(FailureKind kind) {
  switch (kind) {
    case FailureKind::none: return "none";
    case FailureKind::transport: return "transport";
    case FailureKind::rejected: return "rejected";
    case FailureKind::judge_failure: return "judge-failure";
  }
  return "none";
}

std::string BatchResult::digest() const {
  json rows = json::array();
  for (const auto& o : outcomes) {
    rows.push_back({o.ok, o.payload, std::string(to_string(o.failure)), o.detail, o.attempts});
  }
  return sha256_hex(json{{"outcomes", rows}, {"index", index}}.dump());
}

std::uint64_t job_nonce(std::uint64_t run_seed, JobKind kind, std::string_view problem_id, int round) {
  std::uint64_t h = hash_combine(run_seed, static_cast<std::uint64_t>(kind));
  h = hash_combine(h, problem_id);
  return hash_combine(h, static_cast<std::uint64_t>(round));
}

namespace {

class InFlightGuard {
 public:
  InFlightGuard(std::atomic<int>& in_flight, std::atomic<int>& peak) : in_flight_(in_flight) {
    const int now = ++in_flight_;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
  }
  ~InFlightGuard() { --in_flight_; }
  InFlightGuard(const InFlightGuard&) = delete;
  InFlightGuard& operator=(const InFlightGuard&) = delete;

 private:
  std::atomic<int>& in_flight_;
};

}  // namespace

BatchResult run_batch(ChatBackend& backend, std::span<const ChatRequest> jobs, JobKind kind,
                      const PayloadValidator& validator) {
  const BackendConfig& cfg = backend.config();
  cfg.validate();
  if (jobs.empty()) fail(ErrorCode::validation, "run_batch requires at least one job", {{"tag", cfg.tag}});

  const auto started = steady_clock::now();
  BatchResult result;
  result.outcomes.resize(jobs.size());
  result.index.resize(jobs.size());
  std::iota(result.index.begin(), result.index.end(), std::size_t{0});

  std::atomic<std::size_t> next{0};
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};
  std::atomic<int> retries{0};

  auto run_one = [&](std::size_t i) {
    JobOutcome out;
    ChatRequest req = jobs[i];
    req.context.kind = kind;
    const auto job_start = steady_clock::now();
    for (int attempt = 1; attempt <= cfg.retry.max_attempts; ++attempt) {
      req.context.attempt = attempt;
      out.attempts = attempt;
      bool retry = false;
      try {
        std::string payload;
        {
          InFlightGuard guard(in_flight, peak);
          payload = backend.complete(req);
        }
        std::string rejection = validator ? validator(payload, req) : std::string{};
        if (rejection.empty()) {
          out.ok = true;
          out.failure = FailureKind::none;
          out.detail.clear();
          out.payload = std::move(payload);
          break;
        }
        out.failure = FailureKind::judge_failure;
        out.detail = std::move(rejection);
        out.payload = std::move(payload);
        retry = true;
      } catch (const BackendError& e) {
        out.failure = e.retryable() ? FailureKind::transport : FailureKind::rejected;
        out.detail = e.what();
        retry = e.retryable();
      } catch (const std::exception& e) {
        out.failure = FailureKind::rejected;
        out.detail = e.what();
      }
      if (!retry) break;
      if (attempt < cfg.retry.max_attempts) {
        ++retries;
        const double factor = std::pow(cfg.retry.backoff_factor, attempt - 1);
        std::this_thread::sleep_for(duration_cast<microseconds>(cfg.retry.base_backoff * factor));
      }
    }
    out.latency = duration_cast<microseconds>(steady_clock::now() - job_start);
    result.outcomes[i] = std::move(out);
  };

  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.concurrency_limit), jobs.size());
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) run_one(i);
      });
    }
  }
  result.stats.max_in_flight = peak.load();
  result.stats.retries = retries.load();
  result.stats.wall = duration_cast<microseconds>(steady_clock::now() - started);
  return result;
}

// ---------------------------------------------------------------------------
// Role operations
// ---------------------------------------------------------------------------

ReasoningPath make_path(const std::string& problem_id, std::string raw_text, Producer producer, Stage stage) {
  ReasoningPath p;
  p.problem_id = problem_id;
  p.steps = split_steps(raw_text);
  const auto answer = extract_final_answer(raw_text);
  p.has_answer = answer.has_value() && !answer->empty();
  p.final_answer = answer.value_or("");
  p.producer = producer;
  p.stage = stage;
  p.raw_text = std::move(raw_text);
  return p;
}

namespace {

std::vector<PathOutcome> paths_from(const BatchResult& batch, std::span<const Problem> problems, Producer producer,
                                    Stage stage) {
  std::vector<PathOutcome> out;
  out.reserve(batch.outcomes.size());
  for (std::size_t i = 0; i < batch.outcomes.size(); ++i) {
    PathOutcome po;
    po.job = batch.outcomes[i];
    if (po.job.ok) po.path = make_path(problems[i].id, po.job.payload, producer, stage);
    out.push_back(std::move(po));
  }
  return out;
}

ChatRequest request_for(const ChatBackend& backend, PromptMessage msg, JobKind kind, const Problem& problem,
                        int round, std::uint64_t run_seed) {
  ChatRequest req;
  req.messages.push_back(std::move(msg));
  req.sampling = backend.config().sampling;
  req.context.kind = kind;
  req.context.problem = &problem;
  req.context.round = round;
  req.context.nonce = job_nonce(run_seed, kind, problem.id, round);
  return req;
}

}  // namespace

std::vector<PathOutcome> generate_paths(ChatBackend& backend, std::span<const Problem> problems, Producer producer,
                                        Stage stage, std::uint64_t run_seed) {
  if (problems.empty()) return {};
  std::vector<ChatRequest> jobs;
  jobs.reserve(problems.size());
  for (const auto& p : problems) {
    jobs.push_back(request_for(backend, build_solve_prompt(p), JobKind::generate, p, stage.round, run_seed));
  }
  return paths_from(run_batch(backend, jobs, JobKind::generate), problems, producer, stage);
}

std::vector<VerdictOutcome> judge_paths(ChatBackend& backend, std::span<const Problem> problems,
                                        std::span<const ReasoningPath> paths, int round, std::uint64_t run_seed) {
  if (problems.size() != paths.size()) fail(ErrorCode::validation, "judge_paths: problems and paths differ in length");
  if (problems.empty()) return {};
  std::vector<ChatRequest> jobs;
  jobs.reserve(problems.size());
  for (std::size_t i = 0; i < problems.size(); ++i) {
    auto req = request_for(backend, build_judge_prompt(problems[i], paths[i]), JobKind::judge, problems[i], round,
                           hash_combine(run_seed, static_cast<std::uint64_t>(paths[i].producer)));
    req.context.path = &paths[i];
    jobs.push_back(std::move(req));
  }
  auto validator = [](const std::string& payload, const ChatRequest&) {
    auto r = parse_verdict(payload);
    return r.ok() ? std::string{} : r.failure_reason;
  };
  const auto batch = run_batch(backend, jobs, JobKind::judge, validator);
  std::vector<VerdictOutcome> out;
  out.reserve(batch.outcomes.size());
  for (std::size_t i = 0; i < batch.outcomes.size(); ++i) {
    VerdictOutcome vo;
    vo.job = batch.outcomes[i];
    if (vo.job.ok) vo.verdict = parse_verdict(vo.job.payload, {problems[i].id, backend.config().tag, round}).verdict;
    out.push_back(std::move(vo));
  }
  return out;
}

std::vector<PathOutcome> reflect_paths(ChatBackend& backend, std::span<const Problem> problems,
                                       std::span<const ReasoningPath> wrong, std::span<const OrmVerdict> verdicts,
                                       Stage stage, std::uint64_t run_seed) {
  if (problems.size() != wrong.size() || problems.size() != verdicts.size()) {
    fail(ErrorCode::validation, "reflect_paths: inputs differ in length");
  }
  if (problems.empty()) return {};
  std::vector<ChatRequest> jobs;
  jobs.reserve(problems.size());
  for (std::size_t i = 0; i < problems.size(); ++i) {
    auto req = request_for(backend, build_reflection_prompt(problems[i], wrong[i], verdicts[i]), JobKind::reflect,
                           problems[i], stage.round, run_seed);
    req.context.path = &wrong[i];
    req.context.verdict = &verdicts[i];
    jobs.push_back(std::move(req));
  }
  return paths_from(run_batch(backend, jobs, JobKind::reflect), problems, Producer::reflector, stage);
}

PathOutcome generate_path(ChatBackend& backend, const Problem& problem, Producer producer, Stage stage,
                          std::uint64_t run_seed) {
  return generate_paths(backend, std::span(&problem, 1), producer, stage, run_seed).front();
}

VerdictOutcome judge_path(ChatBackend& backend, const Problem& problem, const ReasoningPath& path, int round,
                          std::uint64_t run_seed) {
  return judge_paths(backend, std::span(&problem, 1), std::span(&path, 1), round, run_seed).front();
}

PathOutcome reflect_path(ChatBackend& backend, const Problem& problem, const ReasoningPath& wrong,
                         const OrmVerdict& verdict, Stage stage, std::uint64_t run_seed) {
  return reflect_paths(backend, std::span(&problem, 1), std::span(&wrong, 1), std::span(&verdict, 1), stage, run_seed)
      .front();
}

}  // namespace evoforge
