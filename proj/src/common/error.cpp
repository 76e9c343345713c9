#include "common/error.hpp"

namespace lev {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ok: return "ok";
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::domain: return "domain error";
    case ErrorCode::no_trap: return "no trap";
    case ErrorCode::step_size: return "step size";
    case ErrorCode::lost_particle: return "lost particle";
    case ErrorCode::missing_channel: return "missing channel";
    case ErrorCode::no_peak: return "no peak";
    case ErrorCode::insufficient_data: return "insufficient data";
    case ErrorCode::infeasible: return "infeasible";
    case ErrorCode::stale_plan: return "stale plan";
    case ErrorCode::selection: return "selection";
    case ErrorCode::parse: return "parse error";
    case ErrorCode::io: return "i/o error";
    case ErrorCode::singular: return "singularity";
    case ErrorCode::unbounded_spin: return "unbounded spin";
    case ErrorCode::zero_torque: return "zero torque";
    case ErrorCode::not_converged: return "not converged";
    case ErrorCode::internal: return "internal error";
  }
  return "unknown";
}

}  // namespace lev
