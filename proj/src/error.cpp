#include "evoforge/error.hpp"

namespace evoforge {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::validation: return "validation";
    case ErrorCode::stage_order: return "stage-order";
    case ErrorCode::config_drift: return "config-drift";
    case ErrorCode::io: return "io";
    case ErrorCode::corruption: return "corruption";
    case ErrorCode::transport: return "transport";
    case ErrorCode::judge_failure: return "judge-failure";
    case ErrorCode::locked: return "locked";
    case ErrorCode::hook_failure: return "hook-failure";
  }
  return "unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::corruption:
    case ErrorCode::transport:
    case ErrorCode::judge_failure:
    case ErrorCode::locked:
      return 2;
    default:
      return 1;
  }
}

nlohmann::json Error::to_json() const {
  return {{"code", std::string(to_string(code_))}, {"message", what()}, {"detail", detail_}};
}

}  // namespace evoforge
