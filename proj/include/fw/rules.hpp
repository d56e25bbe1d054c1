#pragma once

// Recurrent fast-weight update rules that stand in for causal attention.
//
// Each rule keeps a per-head state S (d x m) and, when attention
// normalization is enabled, a normalizer z (m). With mapped key k~ and query
// q~ (feature map, then optional sum normalization):
//
//   add    S' = S + v k~^T                       z' = z + k~
//   gated  S' = g S + (1 - g) v k~^T             z' = g z + (1 - g) k~
//   delta  S' = S - g (S k~) k~^T + g v k~^T     z' = z + k~
//   decay  S' = G (.) S + v k~^T                 (never normalized)
//
// g = sigmoid(w_g . x + b_g) is a scalar gate; G = sigmoid(W_z x + b_z)
// sigmoid(W_f x + b_f)^T is a rank-1 gate with entries in (0, 1). The
// readout is y = S' q~, divided by z' . q~ when normalized.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>

#include "fw/feature_map.hpp"
#include "fw/numeric.hpp"

namespace fw {

enum class RuleKind { add, gated, delta, decay };

std::string_view to_string(RuleKind kind);
RuleKind parse_rule(std::string_view name);

constexpr bool has_scalar_gate(RuleKind kind) {
  return kind == RuleKind::gated || kind == RuleKind::delta;
}

struct RuleConfig {
  RuleKind rule = RuleKind::decay;
  FeatureMapKind feature_map = FeatureMapKind::identity;
  bool attention_norm = false;
  bool sum_norm = false;
  std::size_t d = 1;
  std::size_t m = 1;

  // Throws ConfigError for illegal combinations (e.g. decay with attention
  // normalization, identity/elu1 with m != d).
  void validate() const;
  std::string describe() const;

  bool operator==(const RuleConfig&) const = default;
};

template <typename T>
struct GateParams {
  // decay
  std::optional<Matrix<T>> w_z;  // d x d
  std::optional<Vector<T>> b_z;  // d
  std::optional<Matrix<T>> w_f;  // m x d
  std::optional<Vector<T>> b_f;  // m
  // gated / delta
  std::optional<Vector<T>> w_g;  // d
  std::optional<T> b_g;

  bool operator==(const GateParams&) const = default;
};

template <typename T>
struct RuleParams {
  FeatureMapParams<T> phi;
  GateParams<T> gate;

  bool operator==(const RuleParams&) const = default;
};

// All-zero parameters with exactly the fields `config` uses.
template <typename T>
RuleParams<T> zero_rule_params(const RuleConfig& config);

template <typename T>
void validate_rule_params(const RuleConfig& config, const RuleParams<T>& params);

// Visits every present tensor as (name, span) in a fixed order.
template <typename T, typename F>
void for_each_tensor(RuleParams<T>& params, F&& f) {
  if (params.phi.weight) f("phi.weight", params.phi.weight->span());
  if (params.phi.bias) f("phi.bias", params.phi.bias->span());
  auto& g = params.gate;
  if (g.w_z) f("gate.w_z", g.w_z->span());
  if (g.b_z) f("gate.b_z", g.b_z->span());
  if (g.w_f) f("gate.w_f", g.w_f->span());
  if (g.b_f) f("gate.b_f", g.b_f->span());
  if (g.w_g) f("gate.w_g", g.w_g->span());
  if (g.b_g) f("gate.b_g", std::span<T>(&*g.b_g, 1));
}

template <typename T>
struct FastWeightState {
  Matrix<T> S;                 // d x m
  std::optional<Vector<T>> z;  // m, iff attention normalization

  std::size_t bytes() const {
    return (S.size() + (z ? z->size() : 0)) * sizeof(T);
  }
  bool operator==(const FastWeightState&) const = default;
};

template <typename T>
FastWeightState<T> init_state(const RuleConfig& config);

template <typename T>
constexpr T norm_epsilon() {
  if constexpr (sizeof(T) <= sizeof(float)) return static_cast<T>(1e-6);
  else return static_cast<T>(1e-12);
}

// G = sigmoid(W_z x + b_z) sigmoid(W_f x + b_f)^T.
template <typename T>
Matrix<T> compute_gate_matrix(const GateParams<T>& gate, const Vector<T>& x);

// Replacement gate for test instrumentation: a scalar for gated/delta, a
// d x m matrix for decay.
template <typename T>
using ForcedGate = std::variant<std::monostate, T, Matrix<T>>;

// Per-step intermediates, reused across steps to avoid allocation.
template <typename T>
struct StepWorkspace {
  std::vector<T> k_pre, q_pre;
  std::vector<T> k_hat, q_hat;
  std::vector<T> k_tilde, q_tilde;
  std::vector<T> gate_row, gate_col;
  std::vector<T> scratch;
  T gate{0};
  T denominator{1};

  void resize(const RuleConfig& config);
};

// Advances `state` by one token in place and writes the readout into y.
template <typename T>
void step_inplace(const RuleConfig& config, const RuleParams<T>& params,
                  FastWeightState<T>& state, std::span<const T> x, std::span<const T> q,
                  std::span<const T> k, std::span<const T> v, std::span<T> y,
                  StepWorkspace<T>& ws, const ForcedGate<T>& forced = {});

template <typename T>
struct StepResult {
  FastWeightState<T> state;
  Vector<T> y;
};

template <typename T>
StepResult<T> step(const RuleConfig& config, const RuleParams<T>& params,
                   const FastWeightState<T>& state, const Vector<T>& x, const Vector<T>& q,
                   const Vector<T>& k, const Vector<T>& v);

// step() with the gate g (gated/delta) or G (decay) replaced by `forced`.
template <typename T>
StepResult<T> step_with_gate(const RuleConfig& config, const RuleParams<T>& params,
                             const FastWeightState<T>& state, const Vector<T>& x,
                             const Vector<T>& q, const Vector<T>& k, const Vector<T>& v,
                             const ForcedGate<T>& forced);

// Everything backward_scan needs, recorded by scan(). States S_0..S_T are all
// kept, so memory grows as O(T d m).
template <typename T>
struct SequenceCache {
  RuleConfig config;
  std::size_t length = 0;
  Matrix<T> x, q, k, v;            // T x d
  std::vector<T> states;           // (T + 1) x d x m
  std::vector<T> normalizers;      // (T + 1) x m, attention_norm only
  Matrix<T> k_pre, q_pre;          // T x m, relu only
  Matrix<T> k_hat, q_hat;          // T x m, feature map outputs
  Matrix<T> k_tilde, q_tilde;      // T x m, after optional sum normalization
  std::vector<T> gate;             // T, gated/delta
  Matrix<T> gate_row, gate_col;    // T x d, T x m, decay
  std::vector<T> denominators;     // T, attention_norm only
  Matrix<T> y;                     // T x d

  std::span<const T> state(std::size_t t) const {
    const std::size_t n = config.d * config.m;
    return {states.data() + t * n, n};
  }
  std::span<const T> normalizer(std::size_t t) const {
    return {normalizers.data() + t * config.m, config.m};
  }
  std::size_t live_bytes() const;
};

template <typename T>
struct ScanResult {
  Matrix<T> y;
  SequenceCache<T> cache;
};

// Runs the recurrence from the zero state over T rows of X, Q, K, V. Faults
// are rethrown tagged with the failing timestep.
template <typename T>
ScanResult<T> scan(const RuleConfig& config, const RuleParams<T>& params, const Matrix<T>& x,
                   const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v);

}  // namespace fw
