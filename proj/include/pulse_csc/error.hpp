#ifndef PULSE_CSC_ERROR_HPP
#define PULSE_CSC_ERROR_HPP

#include <stdexcept>
#include <string>

namespace pulse_csc {

enum class ErrorCode {
  invalid_spec,
  design_failure,
  unsupported_ratio,
  shape,
  domain,
  convergence,
  input_too_short,
  stale_trace,
  diverged_training,
  configuration,
  undefined_reference,
  empty_evaluation,
  undefined_test,
  insufficient_data,
  schema,
  checkpoint,
  fs_mismatch,
  io,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_spec: return "invalid-spec";
    case ErrorCode::design_failure: return "design-failure";
    case ErrorCode::unsupported_ratio: return "unsupported-ratio";
    case ErrorCode::shape: return "shape";
    case ErrorCode::domain: return "domain";
    case ErrorCode::convergence: return "convergence";
    case ErrorCode::input_too_short: return "input-too-short";
    case ErrorCode::stale_trace: return "stale-trace";
    case ErrorCode::diverged_training: return "diverged-training";
    case ErrorCode::configuration: return "configuration";
    case ErrorCode::undefined_reference: return "undefined-reference";
    case ErrorCode::empty_evaluation: return "empty-evaluation";
    case ErrorCode::undefined_test: return "undefined-test";
    case ErrorCode::insufficient_data: return "insufficient-data";
    case ErrorCode::schema: return "schema";
    case ErrorCode::checkpoint: return "checkpoint";
    case ErrorCode::fs_mismatch: return "fs-mismatch";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it to a distinct exit status.
class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

}  // namespace pulse_csc

#endif  // PULSE_CSC_ERROR_HPP
