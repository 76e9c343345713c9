#pragma once

#include <stdexcept>
#include <string>

namespace lev {

// Numeric values are part of the C API (see levarray.h) and must not change.
enum class ErrorCode : int {
  ok = 0,
  invalid_argument = 1,
  domain = 2,
  no_trap = 3,
  step_size = 4,
  lost_particle = 5,
  missing_channel = 6,
  no_peak = 7,
  insufficient_data = 8,
  infeasible = 9,
  stale_plan = 10,
  selection = 11,
  parse = 12,
  io = 13,
  singular = 14,
  unbounded_spin = 15,
  zero_torque = 16,
  not_converged = 17,
  internal = 99,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace lev
