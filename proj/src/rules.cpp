#include "fw/rules.hpp"

#include <stdexcept>

namespace fw {

std::string_view to_string(RuleKind kind) {
  switch (kind) {
    case RuleKind::add: return "add";
    case RuleKind::gated: return "gated";
    case RuleKind::delta: return "delta";
    case RuleKind::decay: return "decay";
  }
  return "?";
}

RuleKind parse_rule(std::string_view name) {
  if (name == "add") return RuleKind::add;
  if (name == "gated") return RuleKind::gated;
  if (name == "delta") return RuleKind::delta;
  if (name == "decay") return RuleKind::decay;
  throw ConfigError("unknown rule '" + std::string(name) + "'");
}

void RuleConfig::validate() const {
  if (d == 0 || m == 0) throw ConfigError("rule dimensions d and m must be >= 1");
  if (preserves_dim(feature_map) && m != d)
    throw ConfigError(std::string(to_string(feature_map)) + " feature map requires m == d (d=" +
                      std::to_string(d) + ", m=" + std::to_string(m) + ")");
  if (rule == RuleKind::decay && attention_norm)
    throw ConfigError("decay rule does not carry a normalizer: attention_norm is N/A");
}

std::string RuleConfig::describe() const {
  std::string out(to_string(rule));
  out += " phi=";
  out += to_string(feature_map);
  out += attention_norm ? " norm=on" : " norm=off";
  out += sum_norm ? " sum_norm=on" : " sum_norm=off";
  out += " d=" + std::to_string(d) + " m=" + std::to_string(m);
  return out;
}

template <typename T>
RuleParams<T> zero_rule_params(const RuleConfig& config) {
  config.validate();
  RuleParams<T> p;
  if (has_weight(config.feature_map)) p.phi.weight = Matrix<T>(config.m, config.d);
  if (has_bias(config.feature_map)) p.phi.bias = Vector<T>(config.m);
  if (config.rule == RuleKind::decay) {
    p.gate.w_z = Matrix<T>(config.d, config.d);
    p.gate.b_z = Vector<T>(config.d);
    p.gate.w_f = Matrix<T>(config.m, config.d);
    p.gate.b_f = Vector<T>(config.m);
  } else if (has_scalar_gate(config.rule)) {
    p.gate.w_g = Vector<T>(config.d);
    p.gate.b_g = T{0};
  }
  return p;
}

template <typename T>
void validate_rule_params(const RuleConfig& config, const RuleParams<T>& params) {
  config.validate();
  validate_feature_map(config.feature_map, params.phi, config.d, config.m);
  const auto& g = params.gate;
  const bool decay = config.rule == RuleKind::decay;
  const bool scalar = has_scalar_gate(config.rule);
  if (g.w_z.has_value() != decay || g.b_z.has_value() != decay || g.w_f.has_value() != decay ||
      g.b_f.has_value() != decay)
    throw ConfigError("decay gate parameters must be present iff rule is decay");
  if (g.w_g.has_value() != scalar || g.b_g.has_value() != scalar)
    throw ConfigError("scalar gate parameters must be present iff rule is gated or delta");
  if (decay) {
    if (g.w_z->rows() != config.d || g.w_z->cols() != config.d || g.b_z->size() != config.d ||
        g.w_f->rows() != config.m || g.w_f->cols() != config.d || g.b_f->size() != config.m)
      throw DimensionMismatch("decay gate parameter shapes");
  }
  if (scalar && g.w_g->size() != config.d) throw DimensionMismatch("scalar gate weight length");
}

template <typename T>
FastWeightState<T> init_state(const RuleConfig& config) {
  config.validate();
  FastWeightState<T> s{Matrix<T>(config.d, config.m), std::nullopt};
  if (config.attention_norm) s.z = Vector<T>(config.m);
  return s;
}

namespace {

template <typename T>
void affine_sigmoid(const Matrix<T>& w, const Vector<T>& b, std::span<const T> x,
                    std::span<T> out) {
  for (std::size_t r = 0; r < w.rows(); ++r) {
    T acc{0};
    const auto row = w.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * x[c];
    out[r] = sigmoid(acc + b[r]);
  }
}

template <typename T>
T scalar_gate(const GateParams<T>& g, std::span<const T> x) {
  return sigmoid(dot<T>(g.w_g->span(), x) + *g.b_g);
}

template <typename T>
void check_forced(const RuleConfig& config, const ForcedGate<T>& forced) {
  if (std::holds_alternative<std::monostate>(forced)) return;
  if (const T* g = std::get_if<T>(&forced)) {
    if (!has_scalar_gate(config.rule))
      throw ConfigError("scalar forced gate only applies to gated/delta rules");
    if (!(*g >= T{0} && *g <= T{1})) throw std::out_of_range("forced gate outside [0, 1]");
    return;
  }
  const auto& G = std::get<Matrix<T>>(forced);
  if (config.rule != RuleKind::decay)
    throw ConfigError("matrix forced gate only applies to the decay rule");
  if (G.rows() != config.d || G.cols() != config.m)
    throw DimensionMismatch("forced gate matrix must be d x m");
  for (T e : G.span())
    if (!(e >= T{0} && e <= T{1})) throw std::out_of_range("forced gate entry outside [0, 1]");
}

}  // namespace

template <typename T>
Matrix<T> compute_gate_matrix(const GateParams<T>& gate, const Vector<T>& x) {
  if (!gate.w_z || !gate.b_z || !gate.w_f || !gate.b_f)
    throw ConfigError("compute_gate_matrix needs decay gate parameters");
  if (gate.w_z->cols() != x.size() || gate.w_f->cols() != x.size())
    throw DimensionMismatch("gate input length");
  Vector<T> row(gate.w_z->rows());
  Vector<T> col(gate.w_f->rows());
  affine_sigmoid<T>(*gate.w_z, *gate.b_z, x.span(), row.span());
  affine_sigmoid<T>(*gate.w_f, *gate.b_f, x.span(), col.span());
  return outer(row, col);
}

template <typename T>
void StepWorkspace<T>::resize(const RuleConfig& config) {
  const std::size_t m = config.m;
  k_pre.assign(m, T{0});
  q_pre.assign(m, T{0});
  k_hat.assign(m, T{0});
  q_hat.assign(m, T{0});
  k_tilde.assign(m, T{0});
  q_tilde.assign(m, T{0});
  gate_row.assign(config.d, T{0});
  gate_col.assign(m, T{0});
  scratch.assign(config.d, T{0});
}

template <typename T>
void step_inplace(const RuleConfig& config, const RuleParams<T>& params,
                  FastWeightState<T>& state, std::span<const T> x, std::span<const T> q,
                  std::span<const T> k, std::span<const T> v, std::span<T> y,
                  StepWorkspace<T>& ws, const ForcedGate<T>& forced) {
  const std::size_t d = config.d;
  const std::size_t m = config.m;
  if (x.size() != d || q.size() != d || k.size() != d || v.size() != d || y.size() != d)
    throw DimensionMismatch("step: x/q/k/v/y must have length d");
  if (state.S.rows() != d || state.S.cols() != m)
    throw DimensionMismatch("step: state shape does not match config");
  if (state.z.has_value() != config.attention_norm)
    throw ConfigError("step: normalizer presence does not match attention_norm");
  check_forced(config, forced);
  if (ws.k_hat.size() != m || ws.gate_row.size() != d) ws.resize(config);

  const bool relu_map = config.feature_map == FeatureMapKind::relu;
  apply_feature_map_into<T>(config.feature_map, params.phi, k, ws.k_hat,
                            relu_map ? std::span<T>(ws.k_pre) : std::span<T>());
  apply_feature_map_into<T>(config.feature_map, params.phi, q, ws.q_hat,
                            relu_map ? std::span<T>(ws.q_pre) : std::span<T>());
  ws.k_tilde = ws.k_hat;
  ws.q_tilde = ws.q_hat;
  if (config.sum_norm) {
    sum_normalize_inplace<T>(ws.k_tilde);
    sum_normalize_inplace<T>(ws.q_tilde);
  }
  const T* kt = ws.k_tilde.data();
  const T* qt = ws.q_tilde.data();
  T* S = state.S.data();

  switch (config.rule) {
    case RuleKind::add: {
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < m; ++j) S[i * m + j] += v[i] * kt[j];
      if (state.z)
        for (std::size_t j = 0; j < m; ++j) (*state.z)[j] += kt[j];
      break;
    }
    case RuleKind::gated: {
      const T g = std::holds_alternative<T>(forced) ? std::get<T>(forced)
                                                    : scalar_gate(params.gate, x);
      ws.gate = g;
      const T keep = T{1} - g;
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < m; ++j) S[i * m + j] = g * S[i * m + j] + keep * v[i] * kt[j];
      if (state.z)
        for (std::size_t j = 0; j < m; ++j) (*state.z)[j] = g * (*state.z)[j] + keep * kt[j];
      break;
    }
    case RuleKind::delta: {
      const T g = std::holds_alternative<T>(forced) ? std::get<T>(forced)
                                                    : scalar_gate(params.gate, x);
      ws.gate = g;
      // scratch = g (v - S k~), the scaled retrieval error written back.
      for (std::size_t i = 0; i < d; ++i) {
        T retrieved{0};
        for (std::size_t j = 0; j < m; ++j) retrieved += S[i * m + j] * kt[j];
        ws.scratch[i] = g * (v[i] - retrieved);
      }
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < m; ++j) S[i * m + j] += ws.scratch[i] * kt[j];
      if (state.z)
        for (std::size_t j = 0; j < m; ++j) (*state.z)[j] += kt[j];
      break;
    }
    case RuleKind::decay: {
      if (const auto* G = std::get_if<Matrix<T>>(&forced)) {
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < m; ++j)
            S[i * m + j] = (*G)(i, j) * S[i * m + j] + v[i] * kt[j];
      } else {
        affine_sigmoid<T>(*params.gate.w_z, *params.gate.b_z, x, ws.gate_row);
        affine_sigmoid<T>(*params.gate.w_f, *params.gate.b_f, x, ws.gate_col);
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < m; ++j)
            S[i * m + j] = (ws.gate_row[i] * ws.gate_col[j]) * S[i * m + j] + v[i] * kt[j];
      }
      break;
    }
  }

  for (std::size_t i = 0; i < d; ++i) {
    T acc{0};
    for (std::size_t j = 0; j < m; ++j) acc += S[i * m + j] * qt[j];
    y[i] = acc;
  }
  if (state.z) {
    T den{0};
    for (std::size_t j = 0; j < m; ++j) den += (*state.z)[j] * qt[j];
    if (!(std::abs(den) > norm_epsilon<T>()))
      throw NormalizerUnderflow("|z . q| = " + std::to_string(static_cast<double>(std::abs(den))));
    ws.denominator = den;
    for (std::size_t i = 0; i < d; ++i) y[i] /= den;
  } else {
    ws.denominator = T{1};
  }
  if (!all_finite<T>(y) || !all_finite<T>(state.S.span()))
    throw DivergedState("non-finite state or output");
}

template <typename T>
StepResult<T> step_with_gate(const RuleConfig& config, const RuleParams<T>& params,
                             const FastWeightState<T>& state, const Vector<T>& x,
                             const Vector<T>& q, const Vector<T>& k, const Vector<T>& v,
                             const ForcedGate<T>& forced) {
  StepResult<T> out{state, Vector<T>(config.d)};
  StepWorkspace<T> ws;
  ws.resize(config);
  step_inplace<T>(config, params, out.state, x.span(), q.span(), k.span(), v.span(),
                  out.y.span(), ws, forced);
  return out;
}

template <typename T>
StepResult<T> step(const RuleConfig& config, const RuleParams<T>& params,
                   const FastWeightState<T>& state, const Vector<T>& x, const Vector<T>& q,
                   const Vector<T>& k, const Vector<T>& v) {
  return step_with_gate<T>(config, params, state, x, q, k, v, ForcedGate<T>{});
}

template <typename T>
std::size_t SequenceCache<T>::live_bytes() const {
  const std::size_t elems = x.size() + q.size() + k.size() + v.size() + states.size() +
                            normalizers.size() + k_pre.size() + q_pre.size() + k_hat.size() +
                            q_hat.size() + k_tilde.size() + q_tilde.size() + gate.size() +
                            gate_row.size() + gate_col.size() + denominators.size() + y.size();
  return elems * sizeof(T);
}

template <typename T>
ScanResult<T> scan(const RuleConfig& config, const RuleParams<T>& params, const Matrix<T>& x,
                   const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v) {
  validate_rule_params(config, params);
  const std::size_t len = x.rows();
  const std::size_t d = config.d;
  const std::size_t m = config.m;
  for (const Matrix<T>* mat : {&x, &q, &k, &v})
    if (mat->rows() != len || mat->cols() != d)
      throw DimensionMismatch("scan: X, Q, K, V must all be T x d");

  ScanResult<T> out;
  SequenceCache<T>& c = out.cache;
  c.config = config;
  c.length = len;
  c.x = x;
  c.q = q;
  c.k = k;
  c.v = v;
  c.states.assign((len + 1) * d * m, T{0});
  if (config.attention_norm) {
    c.normalizers.assign((len + 1) * m, T{0});
    c.denominators.assign(len, T{0});
  }
  if (config.feature_map == FeatureMapKind::relu) {
    c.k_pre = Matrix<T>(len, m);
    c.q_pre = Matrix<T>(len, m);
  }
  c.k_hat = Matrix<T>(len, m);
  c.q_hat = Matrix<T>(len, m);
  c.k_tilde = Matrix<T>(len, m);
  c.q_tilde = Matrix<T>(len, m);
  if (has_scalar_gate(config.rule)) c.gate.assign(len, T{0});
  if (config.rule == RuleKind::decay) {
    c.gate_row = Matrix<T>(len, d);
    c.gate_col = Matrix<T>(len, m);
  }
  out.y = Matrix<T>(len, d);

  FastWeightState<T> state = init_state<T>(config);
  StepWorkspace<T> ws;
  ws.resize(config);
  for (std::size_t t = 0; t < len; ++t) {
    try {
      step_inplace<T>(config, params, state, x.row(t), q.row(t), k.row(t), v.row(t), out.y.row(t),
                      ws);
    } catch (const NumericalFault& fault) {
      rethrow_at(fault, t);
    }
    std::copy(state.S.span().begin(), state.S.span().end(), c.states.begin() + (t + 1) * d * m);
    if (state.z) {
      std::copy(state.z->begin(), state.z->end(), c.normalizers.begin() + (t + 1) * m);
      c.denominators[t] = ws.denominator;
    }
    if (!c.k_pre.span().empty()) {
      std::copy(ws.k_pre.begin(), ws.k_pre.end(), c.k_pre.row(t).begin());
      std::copy(ws.q_pre.begin(), ws.q_pre.end(), c.q_pre.row(t).begin());
    }
    std::copy(ws.k_hat.begin(), ws.k_hat.end(), c.k_hat.row(t).begin());
    std::copy(ws.q_hat.begin(), ws.q_hat.end(), c.q_hat.row(t).begin());
    std::copy(ws.k_tilde.begin(), ws.k_tilde.end(), c.k_tilde.row(t).begin());
    std::copy(ws.q_tilde.begin(), ws.q_tilde.end(), c.q_tilde.row(t).begin());
    if (!c.gate.empty()) c.gate[t] = ws.gate;
    if (config.rule == RuleKind::decay) {
      std::copy(ws.gate_row.begin(), ws.gate_row.end(), c.gate_row.row(t).begin());
      std::copy(ws.gate_col.begin(), ws.gate_col.end(), c.gate_col.row(t).begin());
    }
  }
  c.y = out.y;
  return out;
}

#define FW_INSTANTIATE(T)                                                                      \
  template RuleParams<T> zero_rule_params<T>(const RuleConfig&);                               \
  template void validate_rule_params<T>(const RuleConfig&, const RuleParams<T>&);              \
  template FastWeightState<T> init_state<T>(const RuleConfig&);                                \
  template Matrix<T> compute_gate_matrix<T>(const GateParams<T>&, const Vector<T>&);           \
  template struct StepWorkspace<T>;                                                            \
  template void step_inplace<T>(const RuleConfig&, const RuleParams<T>&, FastWeightState<T>&,  \
                                std::span<const T>, std::span<const T>, std::span<const T>,    \
                                std::span<const T>, std::span<T>, StepWorkspace<T>&,           \
                                const ForcedGate<T>&);                                         \
  template StepResult<T> step<T>(const RuleConfig&, const RuleParams<T>&,                      \
                                 const FastWeightState<T>&, const Vector<T>&, const Vector<T>&, \
                                 const Vector<T>&, const Vector<T>&);                          \
  template StepResult<T> step_with_gate<T>(const RuleConfig&, const RuleParams<T>&,            \
                                           const FastWeightState<T>&, const Vector<T>&,        \
                                           const Vector<T>&, const Vector<T>&,                 \
                                           const Vector<T>&, const ForcedGate<T>&);            \
  template struct SequenceCache<T>;                                                            \
  template ScanResult<T> scan<T>(const RuleConfig&, const RuleParams<T>&, const Matrix<T>&,    \
                                 const Matrix<T>&, const Matrix<T>&, const Matrix<T>&);

FW_INSTANTIATE(float)
FW_INSTANTIATE(double)
FW_INSTANTIATE(long double)
#undef FW_INSTANTIATE

}  // namespace fw
