#include "evoforge/mocks.hpp"

#include "evoforge/digest.hpp"
#include "evoforge/error.hpp"

namespace evoforge {

std::string wrong_answer_for(const Problem& problem) { return problem.ground_answer + "-x"; }

std::string scripted_solution(const Problem& problem, const std::string& answer, bool correct) {
  std::string text = "Step 1: Identify what problem " + problem.id + " asks for.\n";
  text += correct ? "Step 2: Apply the relevant relation and simplify.\n"
                  : "Step 2: Apply a relation that does not hold here and simplify.\n";
  text += "Step 3: Check the result against the question.\n";
  text += std::string(kAnswerMarker) + " " + answer + ".";
  return text;
}

std::string FunctionBackend::complete(const ChatRequest& request) {
  ++calls_;
  const int now = ++in_flight_;
  int prev = max_concurrent_.load();
  while (now > prev && !max_concurrent_.compare_exchange_weak(prev, now)) {
  }
  struct Leave {
    std::atomic<int>& n;
    ~Leave() { --n; }
  } leave{in_flight_};
  return fn_(request);
}

void ScriptedBackend::script(const std::string& problem_id, std::vector<Step> steps) {
  std::lock_guard lock(mu_);
  scripts_[problem_id] = std::deque<Step>(steps.begin(), steps.end());
}

std::string ScriptedBackend::complete(const ChatRequest& request) {
  const std::string id = request.context.problem ? request.context.problem->id : std::string{};
  Step step;
  {
    std::lock_guard lock(mu_);
    auto it = scripts_.find(id);
    if (it == scripts_.end() || it->second.empty()) throw BackendError("no script for problem '" + id + "'", false, 400);
    step = it->second.front();
    if (it->second.size() > 1) it->second.pop_front();
  }
  if (step.fail) throw BackendError("scripted failure", step.retryable, step.http_status);
  return step.text;
}

std::string SolverBackend::complete(const ChatRequest& request) {
  const Problem* p = request.context.problem;
  if (!p) throw BackendError("solver mock needs the problem in the request context", false, 400);
  const double p_correct = request.context.kind == JobKind::reflect ? recovery_ : accuracy_;
  const bool correct = unit_uniform(hash_combine(request.context.nonce, "solver")) < p_correct;
  return scripted_solution(*p, correct ? p->ground_answer : wrong_answer_for(*p), correct);
}

std::string OracleJudgeBackend::complete(const ChatRequest& request) {
  const Problem* p = request.context.problem;
  const ReasoningPath* path = request.context.path;
  if (!p || !path) throw BackendError("judge mock needs problem and path in the request context", false, 400);
  const bool truly_correct =
      path->has_answer && canonicalize_answer(path->final_answer) == canonicalize_answer(p->ground_answer);
  bool judged_correct = truly_correct;
  const double u = unit_uniform(hash_combine(request.context.nonce, "judge"));
  if (truly_correct && u < false_reject_) judged_correct = false;
  if (!truly_correct && u < false_accept_) judged_correct = true;
  if (flip_ids_.contains(p->id)) judged_correct = !judged_correct;

  OrmVerdict v;
  v.status = judged_correct ? Status::correct : Status::wrong;
  if (judged_correct) {
    v.improvement_suggestion = "State the governing relation before substituting values.";
  } else {
    v.error_step = path->steps.size() >= 2 ? "Step 2" : "Step 1";
    v.error_analysis = "The reasoning in this step does not follow from the previous one, so the conclusion is invalid.";
    v.improvement_suggestion = "Justify each inference before moving on.";
  }
  return serialize_verdict(v);
}

std::pair<std::string, std::map<std::string, std::string>> parse_mock_endpoint(std::string_view endpoint) {
  constexpr std::string_view kScheme = "mock://";
  if (!endpoint.starts_with(kScheme)) fail(ErrorCode::validation, "not a mock endpoint", {{"endpoint", endpoint}});
  std::string_view rest = endpoint.substr(kScheme.size());
  const auto q = rest.find('?');
  std::string kind(rest.substr(0, q));
  std::map<std::string, std::string> params;
  if (q != std::string_view::npos) {
    std::string_view query = rest.substr(q + 1);
    while (!query.empty()) {
      const auto amp = query.find('&');
      const std::string_view pair = query.substr(0, amp);
      const auto eq = pair.find('=');
      if (eq == std::string_view::npos) fail(ErrorCode::validation, "malformed mock parameter", {{"endpoint", endpoint}});
      params[std::string(pair.substr(0, eq))] = std::string(pair.substr(eq + 1));
      if (amp == std::string_view::npos) break;
      query = query.substr(amp + 1);
    }
  }
  return {kind, params};
}

}  // namespace evoforge
