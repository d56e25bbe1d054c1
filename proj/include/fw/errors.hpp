#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace fw {

struct DimensionMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class FaultKind { near_zero_sum, normalizer_underflow, diverged_state };

const char* to_string(FaultKind kind);

// Base of every runtime numerical failure raised by the recurrences. Training
// treats any of these as a divergence outcome instead of a crash.
class NumericalFault : public std::runtime_error {
 public:
  NumericalFault(FaultKind kind, std::string detail,
                 std::optional<std::size_t> timestep = std::nullopt);

  FaultKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }
  std::optional<std::size_t> timestep() const noexcept { return timestep_; }

 private:
  FaultKind kind_;
  std::string detail_;
  std::optional<std::size_t> timestep_;
};

struct NearZeroSum : NumericalFault {
  explicit NearZeroSum(std::string detail,
                       std::optional<std::size_t> timestep = std::nullopt)
      : NumericalFault(FaultKind::near_zero_sum, std::move(detail), timestep) {}
};

struct NormalizerUnderflow : NumericalFault {
  explicit NormalizerUnderflow(std::string detail,
                               std::optional<std::size_t> timestep = std::nullopt)
      : NumericalFault(FaultKind::normalizer_underflow, std::move(detail), timestep) {}
};

struct DivergedState : NumericalFault {
  explicit DivergedState(std::string detail,
                         std::optional<std::size_t> timestep = std::nullopt)
      : NumericalFault(FaultKind::diverged_state, std::move(detail), timestep) {}
};

// Re-raises `fault` as its concrete type, tagged with `timestep`.
[[noreturn]] void rethrow_at(const NumericalFault& fault, std::size_t timestep);

}  // namespace fw
