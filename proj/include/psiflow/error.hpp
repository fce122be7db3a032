#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace psiflow {

enum class ErrorKind {
  invalid_argument,
  stage_solver_failure,
  linear_solver_failure,
  numeric_failure,
  stiffness_failure,
  out_of_domain,
  metadata_absent,
  io_failure,
  version_mismatch,
  checksum_mismatch,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Library-wide exception. The kind drives CLI exit codes and lets callers
/// tell recoverable numerical failures apart from contract violations.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::invalid_argument, what);
}

}  // namespace psiflow
