/// @file mocks.hpp
/// @brief Deterministic in-process backends selected by `mock://` endpoints.
///
///   mock://solver?accuracy=A         generate/reflect; correct with probability A
///   mock://reflector?recovery=R      reflect; fixes the answer with probability R
///   mock://oracle-judge?false_reject=F&false_accept=E
///   mock://echo                      returns the last message text
///
/// Randomness comes only from the request nonce, so results do not depend on
/// thread interleaving.
#pragma once

#include <atomic>
#include <deque>
#include <map>
#include <mutex>
#include <set>

#include "evoforge/gateway.hpp"

namespace evoforge {

/// Scripted solution text ending in the answer marker sentence.
std::string scripted_solution(const Problem& problem, const std::string& answer, bool correct);
std::string wrong_answer_for(const Problem& problem);

/// Answers with a callback; counts concurrent calls.
class FunctionBackend : public ChatBackend {
 public:
  using Fn = std::function<std::string(const ChatRequest&)>;
  FunctionBackend(BackendConfig config, Fn fn) : config_(std::move(config)), fn_(std::move(fn)) {}

  const BackendConfig& config() const override { return config_; }
  std::string complete(const ChatRequest& request) override;

  int calls() const noexcept { return calls_.load(); }
  int max_concurrent() const noexcept { return max_concurrent_.load(); }

 private:
  BackendConfig config_;
  Fn fn_;
  std::atomic<int> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_concurrent_{0};
};

/// Per-problem transcript: each call pops the next step; an exhausted script
/// repeats its last step.
class ScriptedBackend : public ChatBackend {
 public:
  struct Step {
    std::string text;
    bool fail = false;
    bool retryable = true;
    int http_status = 500;
  };
  static Step reply(std::string text) { return {std::move(text)}; }
  static Step error(int http_status = 500, bool retryable = true) { return {"", true, retryable, http_status}; }

  explicit ScriptedBackend(BackendConfig config) : config_(std::move(config)) {}
  void script(const std::string& problem_id, std::vector<Step> steps);

  const BackendConfig& config() const override { return config_; }
  std::string complete(const ChatRequest& request) override;

 private:
  BackendConfig config_;
  std::mutex mu_;
  std::map<std::string, std::deque<Step>> scripts_;
};

class SolverBackend : public ChatBackend {
 public:
  SolverBackend(BackendConfig config, double accuracy, double recovery)
      : config_(std::move(config)), accuracy_(accuracy), recovery_(recovery) {}
  const BackendConfig& config() const override { return config_; }
  std::string complete(const ChatRequest& request) override;

 private:
  BackendConfig config_;
  double accuracy_;
  double recovery_;
};

/// Judges by canonical answer match; `flip_ids` invert the truthful verdict
/// for chosen problems, `false_reject`/`false_accept` do so at random.
class OracleJudgeBackend : public ChatBackend {
 public:
  OracleJudgeBackend(BackendConfig config, double false_reject = 0.0, double false_accept = 0.0,
                     std::set<std::string> flip_ids = {})
      : config_(std::move(config)), false_reject_(false_reject), false_accept_(false_accept), flip_ids_(std::move(flip_ids)) {}
  const BackendConfig& config() const override { return config_; }
  std::string complete(const ChatRequest& request) override;

 private:
  BackendConfig config_;
  double false_reject_;
  double false_accept_;
  std::set<std::string> flip_ids_;
};

/// Parses `mock://kind?k=v&...` into kind and parameters.
std::pair<std::string, std::map<std::string, std::string>> parse_mock_endpoint(std::string_view endpoint);

}  // namespace evoforge
