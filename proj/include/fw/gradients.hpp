#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "fw/rules.hpp"

namespace fw {

// Gradients for the rule parameters actually used by the configuration
// (unused fields stay empty) and for the scan inputs.
template <typename T>
struct GradientBundle {
  RuleParams<T> params;
  Matrix<T> dx, dq, dk, dv;  // T x d
};

// Exact adjoint of scan(): given dL/dY, returns dL/d(params, X, Q, K, V).
// Walks the cached states in reverse; nothing is recomputed by a forward pass.
template <typename T>
GradientBundle<T> backward_scan(const RuleConfig& config, const RuleParams<T>& params,
                                const SequenceCache<T>& cache, const Matrix<T>& dy);

// Accumulates `grad` into `into` field by field (shapes must match).
template <typename T>
void accumulate(RuleParams<T>& into, const RuleParams<T>& grad);

struct FdReport {
  double max_rel_err = 0.0;
  std::size_t worst_coordinate = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t coordinates = 0;
};

// Central differences (f(theta + eps e_i) - f(theta - eps e_i)) / 2 eps per
// coordinate, compared with `analytic` using |a - n| / max(|a|, |n|, 1e-8).
// Throws std::domain_error if the loss is non-finite.
FdReport finite_difference_check(const std::function<double(std::span<const double>)>& loss,
                                 std::span<const double> theta, std::span<const double> analytic,
                                 double eps);

// Same check for a loss evaluated in extended precision.
FdReport finite_difference_check_extended(
    const std::function<long double(std::span<const double>)>& loss, std::span<const double> theta,
    std::span<const double> analytic, double eps);

// Random, well-conditioned parameters for `config` (positive feature inputs
// where a normalizer would otherwise be near zero).
template <typename T>
RuleParams<T> random_rule_params(const RuleConfig& config, std::uint64_t seed);

// Builds random params and inputs of length `length`, takes a fixed random
// linear functional of the scan output as the loss and compares the double
// precision backward_scan with central differences of that loss evaluated in
// extended precision.
FdReport gradcheck_rule(const RuleConfig& config, std::uint64_t seed, std::size_t length,
                        double eps = 1e-5);

// Same comparison but with the analytic gradient computed in single
// precision. Relative errors use max(|a|, |n|, kSingleGradFloor) as the
// denominator: float roundoff leaves ~1e-7 residue on exactly-zero
// derivatives, which a tighter floor would report as a relative error of 1.
inline constexpr double kSingleGradFloor = 1e-3;
FdReport gradcheck_rule_single(const RuleConfig& config, std::uint64_t seed, std::size_t length,
                               double eps = 1e-3);

// Every legal rule configuration for head dimension d and map dimension m
// (identity/elu1 use m = d).
std::vector<RuleConfig> legal_rule_configs(std::size_t d, std::size_t m);

}  // namespace fw
