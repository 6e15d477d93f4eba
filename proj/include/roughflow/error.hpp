#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace roughflow {

enum class ErrorCode {
  invalid_grid,
  invalid_argument,
  kernel_too_wide,
  kernel_unresolved,
  singular_metric,
  lost_ellipticity,
  spec_infeasible,
  unresolved_cutoff,
  not_fair,
  insufficient_samples,
  negative_terminal_data,
  trajectory_too_coarse,
  io_error,
  config_invalid,
  mismatched_scenarios,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_grid: return "InvalidGrid";
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::kernel_too_wide: return "KernelTooWide";
    case ErrorCode::kernel_unresolved: return "KernelUnresolved";
    case ErrorCode::singular_metric: return "SingularMetric";
    case ErrorCode::lost_ellipticity: return "LostEllipticity";
    case ErrorCode::spec_infeasible: return "SpecInfeasible";
    case ErrorCode::unresolved_cutoff: return "UnresolvedCutoff";
    case ErrorCode::not_fair: return "NotFair";
    case ErrorCode::insufficient_samples: return "InsufficientSamples";
    case ErrorCode::negative_terminal_data: return "NegativeTerminalData";
    case ErrorCode::trajectory_too_coarse: return "TrajectoryTooCoarse";
    case ErrorCode::io_error: return "IoError";
    case ErrorCode::config_invalid: return "ConfigInvalid";
    case ErrorCode::mismatched_scenarios: return "MismatchedScenarios";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace roughflow
