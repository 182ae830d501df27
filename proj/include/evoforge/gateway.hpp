/// @file gateway.hpp
/// @brief Model backends behind a chat-completion contract, plus the batch
///        runner that enforces bounded concurrency, retries and ordering.
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evoforge/prompts.hpp"
#include "evoforge/types.hpp"

namespace evoforge {

struct Sampling {
  double temperature = 0.0;
  int max_tokens = 2048;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_backoff{500};
  double backoff_factor = 2.0;
};

struct BackendConfig {
  std::string tag;
  std::string endpoint;  // http(s)://host[:port]/path, or mock://<kind>[?k=v&...]
  std::string model_name;
  std::string auth_env;  // name of the env var holding the bearer token; empty = none
  Sampling sampling;
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry;
  int concurrency_limit = 4;

  /// Throws Error(validation) on out-of-range values or a malformed endpoint.
  void validate() const;
};

void to_json(json& j, const BackendConfig& c);
void from_json(const json& j, BackendConfig& c);

enum class JobKind { generate, judge, reflect, annotate, classify };
std::string_view to_string(JobKind kind);

/// Metadata travelling with a request. Network backends ignore it; mock and
/// simulation backends use it to answer without parsing prompt text. The
/// pointers are valid for the duration of the call.
struct RequestContext {
  JobKind kind = JobKind::generate;
  const Problem* problem = nullptr;
  const ReasoningPath* path = nullptr;
  const OrmVerdict* verdict = nullptr;
  int round = 0;
  std::uint64_t nonce = 0;  // fixed per job across retries
  int attempt = 1;
};

struct ChatRequest {
  std::vector<PromptMessage> messages;
  Sampling sampling;
  RequestContext context;
};

/// Thrown by backends. `retryable` covers 429, 5xx, timeouts and connection
/// failures; any other 4xx is final.
class BackendError : public std::runtime_error {
 public:
  BackendError(const std::string& what, bool retryable, int http_status = 0)
      : std::runtime_error(what), retryable_(retryable), http_status_(http_status) {}
  bool retryable() const noexcept { return retryable_; }
  int http_status() const noexcept { return http_status_; }

 private:
  bool retryable_;
  int http_status_;
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual const BackendConfig& config() const = 0;
  virtual std::string complete(const ChatRequest& request) = 0;
};

/// Builds the backend named by `config.endpoint`. `asset_root` resolves
/// relative image paths for network backends.
std::shared_ptr<ChatBackend> make_backend(const BackendConfig& config, const std::filesystem::path& asset_root = {});

/// JSON body for the wire protocol: {model, messages, temperature, max_tokens}.
json chat_request_body(const BackendConfig& config, const ChatRequest& request, const std::filesystem::path& asset_root);

/// First choice's message text from a chat-completion response body.
std::string chat_response_text(const json& body);

// ---------------------------------------------------------------------------
// Batch runner
// ---------------------------------------------------------------------------

enum class FailureKind { none, transport, rejected, judge_failure };
std::string_view to_string(FailureKind kind);

struct JobOutcome {
  bool ok = false;
  std::string payload;
  FailureKind failure = FailureKind::none;
  std::string detail;
  int attempts = 0;
  std::chrono::microseconds latency{0};
};

struct BatchStats {
  std::chrono::microseconds wall{0};
  int max_in_flight = 0;
  int retries = 0;
};

struct BatchResult {
  std::vector<JobOutcome> outcomes;  // outcomes[i] belongs to jobs[i]
  std::vector<std::size_t> index;    // job index -> outcome index (identity)
  BatchStats stats;

  std::string digest() const;
};

/// Returns a rejection reason for a payload that should be retried, or an
/// empty string to accept it.
using PayloadValidator = std::function<std::string(const std::string& payload, const ChatRequest& request)>;

/// Runs every job with at most `config().concurrency_limit` calls in flight.
/// Failed attempts are retried up to retry.max_attempts with a delay of
/// base_backoff * backoff_factor^n after the n-th failure (n from 0). Payloads
/// the validator rejects are retried the same way and end as judge_failure.
BatchResult run_batch(ChatBackend& backend, std::span<const ChatRequest> jobs, JobKind kind,
                      const PayloadValidator& validator = {});

/// Stable per-job nonce: independent of batch order and thread timing.
std::uint64_t job_nonce(std::uint64_t run_seed, JobKind kind, std::string_view problem_id, int round);

// ---------------------------------------------------------------------------
// Role operations
// ---------------------------------------------------------------------------

struct PathOutcome {
  std::optional<ReasoningPath> path;  // present on transport success, even when answerless
  JobOutcome job;
};

struct VerdictOutcome {
  std::optional<OrmVerdict> verdict;
  JobOutcome job;
};

/// Wraps raw model text as a path: steps split on enumerators/blank lines,
/// final answer from the closing marker sentence.
ReasoningPath make_path(const std::string& problem_id, std::string raw_text, Producer producer, Stage stage);

std::vector<PathOutcome> generate_paths(ChatBackend& backend, std::span<const Problem> problems, Producer producer,
                                        Stage stage, std::uint64_t run_seed);
std::vector<VerdictOutcome> judge_paths(ChatBackend& backend, std::span<const Problem> problems,
                                        std::span<const ReasoningPath> paths, int round, std::uint64_t run_seed);
std::vector<PathOutcome> reflect_paths(ChatBackend& backend, std::span<const Problem> problems,
                                       std::span<const ReasoningPath> wrong, std::span<const OrmVerdict> verdicts,
                                       Stage stage, std::uint64_t run_seed);

PathOutcome generate_path(ChatBackend& backend, const Problem& problem, Producer producer, Stage stage,
                          std::uint64_t run_seed = 0);
VerdictOutcome judge_path(ChatBackend& backend, const Problem& problem, const ReasoningPath& path, int round,
                          std::uint64_t run_seed = 0);
PathOutcome reflect_path(ChatBackend& backend, const Problem& problem, const ReasoningPath& wrong,
                         const OrmVerdict& verdict, Stage stage, std::uint64_t run_seed = 0);

}  // namespace evoforge
