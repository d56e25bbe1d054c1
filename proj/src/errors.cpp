#include "fw/errors.hpp"

namespace fw {

const char* to_string(FaultKind kind) {
  switch (kind) {
    case FaultKind::near_zero_sum: return "NearZeroSum";
    case FaultKind::normalizer_underflow: return "NormalizerUnderflow";
    case FaultKind::diverged_state: return "DivergedState";
  }
  return "NumericalFault";
}

namespace {

std::string format_fault(FaultKind kind, const std::string& detail,
                         std::optional<std::size_t> timestep) {
  std::string out = to_string(kind);
  if (timestep) out += " at t=" + std::to_string(*timestep);
  if (!detail.empty()) out += ": " + detail;
  return out;
}

}  // namespace

NumericalFault::NumericalFault(FaultKind kind, std::string detail,
                               std::optional<std::size_t> timestep)
    : std::runtime_error(format_fault(kind, detail, timestep)),
      kind_(kind),
      detail_(std::move(detail)),
      timestep_(timestep) {}

void rethrow_at(const NumericalFault& fault, std::size_t timestep) {
  switch (fault.kind()) {
    case FaultKind::near_zero_sum: throw NearZeroSum(fault.detail(), timestep);
    case FaultKind::normalizer_underflow:
      throw NormalizerUnderflow(fault.detail(), timestep);
    case FaultKind::diverged_state: throw DivergedState(fault.detail(), timestep);
  }
  throw fault;
}

}  // namespace fw
