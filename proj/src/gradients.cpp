#include "fw/gradients.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace fw {

namespace {

// Backpropagates through the optional sum normalization: with u' = u / s,
// du = (du' - (du' . u')) / s.
template <typename T>
void sum_normalize_backward(std::span<const T> hat, std::span<const T> tilde,
                            std::span<T> grad) {
  T total{0};
  for (T h : hat) total += h;
  T proj{0};
  for (std::size_t j = 0; j < grad.size(); ++j) proj += grad[j] * tilde[j];
  for (std::size_t j = 0; j < grad.size(); ++j) grad[j] = (grad[j] - proj) / total;
}

// Maps d(phi output) back to d(input), accumulating weight/bias gradients.
template <typename T>
void feature_map_backward(const RuleConfig& config, const RuleParams<T>& params,
                          std::span<const T> input, std::span<const T> pre, std::span<T> dhat,
                          RuleParams<T>& grads, std::span<T> dinput) {
  const std::size_t d = config.d;
  switch (config.feature_map) {
    case FeatureMapKind::identity:
      for (std::size_t i = 0; i < d; ++i) dinput[i] += dhat[i];
      return;
    case FeatureMapKind::elu1:
      for (std::size_t i = 0; i < d; ++i)
        dinput[i] += dhat[i] * (input[i] >= T{0} ? T{1} : std::exp(input[i]));
      return;
    case FeatureMapKind::relu:
      for (std::size_t j = 0; j < config.m; ++j) {
        if (!(pre[j] > T{0})) dhat[j] = T{0};
        (*grads.phi.bias)[j] += dhat[j];
      }
      [[fallthrough]];
    case FeatureMapKind::linear: {
      const Matrix<T>& w = *params.phi.weight;
      Matrix<T>& dw = *grads.phi.weight;
      for (std::size_t j = 0; j < config.m; ++j) {
        const T g = dhat[j];
        for (std::size_t i = 0; i < d; ++i) {
          dw(j, i) += g * input[i];
          dinput[i] += g * w(j, i);
        }
      }
      return;
    }
  }
}

}  // namespace

template <typename T>
GradientBundle<T> backward_scan(const RuleConfig& config, const RuleParams<T>& params,
                                const SequenceCache<T>& cache, const Matrix<T>& dy) {
  if (!(cache.config == config)) throw ConfigError("backward_scan: cache was built for another config");
  validate_rule_params(config, params);
  const std::size_t len = cache.length;
  const std::size_t d = config.d;
  const std::size_t m = config.m;
  if (dy.rows() != len || dy.cols() != d) throw DimensionMismatch("backward_scan: dY must be T x d");

  GradientBundle<T> out;
  out.params = zero_rule_params<T>(config);
  out.dx = Matrix<T>(len, d);
  out.dq = Matrix<T>(len, d);
  out.dk = Matrix<T>(len, d);
  out.dv = Matrix<T>(len, d);

  std::vector<T> dS(d * m, T{0});
  std::vector<T> dz(config.attention_norm ? m : 0, T{0});
  std::vector<T> dk_tilde(m), dq_tilde(m), d_out(d), dS_k(d), residual(d);
  std::vector<T> d_row(d), d_col(m);

  for (std::size_t step = len; step-- > 0;) {
    const auto S_t = cache.state(step + 1);
    const auto S_prev = cache.state(step);
    const auto kt = cache.k_tilde.row(step);
    const auto qt = cache.q_tilde.row(step);
    const auto v = cache.v.row(step);
    const auto x = cache.x.row(step);
    const auto g_y = dy.row(step);
    std::fill(dk_tilde.begin(), dk_tilde.end(), T{0});
    std::fill(dq_tilde.begin(), dq_tilde.end(), T{0});

    // Readout y = S_t q~ [/ (z_t . q~)].
    if (config.attention_norm) {
      const T den = cache.denominators[step];
      const auto y = cache.y.row(step);
      const auto z_t = cache.normalizer(step + 1);
      T dden{0};
      for (std::size_t i = 0; i < d; ++i) dden += g_y[i] * y[i];
      dden = -dden / den;
      for (std::size_t i = 0; i < d; ++i) d_out[i] = g_y[i] / den;
      for (std::size_t j = 0; j < m; ++j) {
        dz[j] += dden * qt[j];
        dq_tilde[j] += dden * z_t[j];
      }
    } else {
      for (std::size_t i = 0; i < d; ++i) d_out[i] = g_y[i];
    }
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        dS[i * m + j] += d_out[i] * qt[j];
        dq_tilde[j] += S_t[i * m + j] * d_out[i];
      }

    // dS_k = dS k~ is the value-side gradient of every write term.
    for (std::size_t i = 0; i < d; ++i) {
      T acc{0};
      for (std::size_t j = 0; j < m; ++j) acc += dS[i * m + j] * kt[j];
      dS_k[i] = acc;
    }
    auto dv = out.dv.row(step);
    auto dx = out.dx.row(step);
    T d_gate{0};

    switch (config.rule) {
      case RuleKind::add: {
        for (std::size_t i = 0; i < d; ++i) dv[i] += dS_k[i];
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < m; ++j) dk_tilde[j] += dS[i * m + j] * v[i];
        for (std::size_t j = 0; j < dz.size(); ++j) dk_tilde[j] += dz[j];
        break;
      }
      case RuleKind::gated: {
        const T g = cache.gate[step];
        const T keep = T{1} - g;
        T overlap{0};
        for (std::size_t n = 0; n < d * m; ++n) overlap += dS[n] * S_prev[n];
        T written{0};
        for (std::size_t i = 0; i < d; ++i) written += v[i] * dS_k[i];
        d_gate = overlap - written;
        for (std::size_t i = 0; i < d; ++i) dv[i] += keep * dS_k[i];
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < m; ++j) dk_tilde[j] += keep * dS[i * m + j] * v[i];
        for (auto& e : dS) e *= g;
        if (config.attention_norm) {
          const auto z_prev = cache.normalizer(step);
          for (std::size_t j = 0; j < m; ++j) {
            d_gate += dz[j] * (z_prev[j] - kt[j]);
            dk_tilde[j] += keep * dz[j];
            dz[j] *= g;
          }
        }
        break;
      }
      case RuleKind::delta: {
        const T g = cache.gate[step];
        // residual = v - S_prev k~
        for (std::size_t i = 0; i < d; ++i) {
          T acc{0};
          for (std::size_t j = 0; j < m; ++j) acc += S_prev[i * m + j] * kt[j];
          residual[i] = v[i] - acc;
        }
        for (std::size_t i = 0; i < d; ++i) d_gate += residual[i] * dS_k[i];
        for (std::size_t i = 0; i < d; ++i) dv[i] += g * dS_k[i];
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < m; ++j)
            dk_tilde[j] += g * (dS[i * m + j] * residual[i] - S_prev[i * m + j] * dS_k[i]);
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < m; ++j) dS[i * m + j] -= g * dS_k[i] * kt[j];
        for (std::size_t j = 0; j < dz.size(); ++j) dk_tilde[j] += dz[j];
        break;
      }
      case RuleKind::decay: {
        const auto a = cache.gate_row.row(step);
        const auto b = cache.gate_col.row(step);
        for (std::size_t i = 0; i < d; ++i) dv[i] += dS_k[i];
        std::fill(d_row.begin(), d_row.end(), T{0});
        std::fill(d_col.begin(), d_col.end(), T{0});
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const std::size_t n = i * m + j;
            dk_tilde[j] += dS[n] * v[i];
            const T dG = dS[n] * S_prev[n];
            d_row[i] += dG * b[j];
            d_col[j] += dG * a[i];
            dS[n] *= a[i] * b[j];
          }
        auto& gp = out.params.gate;
        const auto& w_z = *params.gate.w_z;
        const auto& w_f = *params.gate.w_f;
        for (std::size_t i = 0; i < d; ++i) {
          const T pre = d_row[i] * a[i] * (T{1} - a[i]);
          (*gp.b_z)[i] += pre;
          for (std::size_t c = 0; c < d; ++c) {
            (*gp.w_z)(i, c) += pre * x[c];
            dx[c] += pre * w_z(i, c);
          }
        }
        for (std::size_t j = 0; j < m; ++j) {
          const T pre = d_col[j] * b[j] * (T{1} - b[j]);
          (*gp.b_f)[j] += pre;
          for (std::size_t c = 0; c < d; ++c) {
            (*gp.w_f)(j, c) += pre * x[c];
            dx[c] += pre * w_f(j, c);
          }
        }
        break;
      }
    }

    if (has_scalar_gate(config.rule)) {
      const T g = cache.gate[step];
      const T pre = d_gate * g * (T{1} - g);
      auto& gp = out.params.gate;
      *gp.b_g += pre;
      for (std::size_t c = 0; c < d; ++c) {
        (*gp.w_g)[c] += pre * x[c];
        dx[c] += pre * (*params.gate.w_g)[c];
      }
    }

    if (config.sum_norm) {
      sum_normalize_backward<T>(cache.k_hat.row(step), kt, dk_tilde);
      sum_normalize_backward<T>(cache.q_hat.row(step), qt, dq_tilde);
    }
    const bool relu_map = config.feature_map == FeatureMapKind::relu;
    feature_map_backward<T>(config, params, cache.k.row(step),
                            relu_map ? cache.k_pre.row(step) : std::span<const T>(), dk_tilde,
                            out.params, out.dk.row(step));
    feature_map_backward<T>(config, params, cache.q.row(step),
                            relu_map ? cache.q_pre.row(step) : std::span<const T>(), dq_tilde,
                            out.params, out.dq.row(step));
  }
  return out;
}

template <typename T>
void accumulate(RuleParams<T>& into, const RuleParams<T>& grad) {
  RuleParams<T> copy = grad;
  std::vector<std::span<T>> sources;
  for_each_tensor(copy, [&](const char*, std::span<T> s) { sources.push_back(s); });
  std::size_t index = 0;
  for_each_tensor(into, [&](const char* name, std::span<T> dst) {
    if (index >= sources.size() || sources[index].size() != dst.size())
      throw DimensionMismatch(std::string("accumulate: mismatch at ") + name);
    const auto src = sources[index++];
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
  if (index != sources.size()) throw DimensionMismatch("accumulate: tensor count mismatch");
}

namespace {

// Shared by the double and extended-precision entry points. The step is the
// exact difference of the two perturbed coordinates, not 2 eps.
template <typename R>
FdReport fd_check(const std::function<R(std::span<const double>)>& loss,
                  std::span<const double> theta, std::span<const double> analytic, double eps,
                  double floor = 1e-8) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_difference_check: eps must be > 0");
  if (theta.size() != analytic.size())
    throw DimensionMismatch("finite_difference_check: theta/gradient length mismatch");
  FdReport report;
  report.coordinates = theta.size();
  std::vector<double> probe(theta.begin(), theta.end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    const double hi = saved + eps;
    const double lo = saved - eps;
    probe[i] = hi;
    const R up = loss(probe);
    probe[i] = lo;
    const R down = loss(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw std::domain_error("finite_difference_check: non-finite loss at coordinate " +
                              std::to_string(i));
    const double numeric = static_cast<double>((up - down) / (static_cast<R>(hi) - static_cast<R>(lo)));
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    const double rel = std::abs(a - numeric) / denom;
    if (i == 0 || rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_coordinate = i;
      report.analytic_at_worst = a;
      report.numeric_at_worst = numeric;
    }
  }
  return report;
}

}  // namespace

FdReport finite_difference_check(const std::function<double(std::span<const double>)>& loss,
                                 std::span<const double> theta, std::span<const double> analytic,
                                 double eps) {
  return fd_check<double>(loss, theta, analytic, eps);
}

FdReport finite_difference_check_extended(
    const std::function<long double(std::span<const double>)>& loss, std::span<const double> theta,
    std::span<const double> analytic, double eps) {
  return fd_check<long double>(loss, theta, analytic, eps);
}

namespace {

FdReport finite_difference_check_extended(
    const std::function<long double(std::span<const double>)>& loss, std::span<const double> theta,
    std::span<const double> analytic, double eps, double floor) {
  return fd_check<long double>(loss, theta, analytic, eps, floor);
}

}  // namespace

template <typename T>
RuleParams<T> random_rule_params(const RuleConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> sym(-0.5, 0.5);
  std::uniform_real_distribution<double> pos(0.1, 0.6);
  RuleParams<T> p = zero_rule_params<T>(config);
  const bool positive_inputs =
      (config.attention_norm || config.sum_norm) && !is_positive(config.feature_map);
  if (p.phi.weight)
    for (auto& e : p.phi.weight->span())
      e = static_cast<T>(positive_inputs ? pos(rng) : sym(rng));
  if (p.phi.bias)
    for (auto& e : p.phi.bias->span()) e = static_cast<T>(1.0 + pos(rng));
  auto fill = [&](std::span<T> s) {
    for (auto& e : s) e = static_cast<T>(2.0 * sym(rng));
  };
  auto& g = p.gate;
  if (g.w_z) fill(g.w_z->span());
  if (g.b_z) fill(g.b_z->span());
  if (g.w_f) fill(g.w_f->span());
  if (g.b_f) fill(g.b_f->span());
  if (config.rule == RuleKind::delta) {
    // Small steps keep g |k|^2 well below 2, where the delta recursion is stable.
    if (g.w_g)
      for (auto& e : g.w_g->span()) e = static_cast<T>(0.1 * sym(rng));
    if (g.b_g) *g.b_g = static_cast<T>(-3.5 + sym(rng));
  } else {
    if (g.w_g) fill(g.w_g->span());
    if (g.b_g) *g.b_g = static_cast<T>(2.0 * sym(rng));
  }
  return p;
}

namespace {

struct RuleProblem {
  RuleParams<double> params;
  Matrix<double> x, q, k, v, functional;
};

RuleProblem make_problem(const RuleConfig& config, std::uint64_t seed, std::size_t length) {
  RuleProblem p;
  p.params = random_rule_params<double>(config, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::uniform_real_distribution<double> pos(0.1, 1.0);
  const bool positive_inputs =
      (config.attention_norm || config.sum_norm) && !is_positive(config.feature_map);
  auto draw = [&](bool positive) {
    Matrix<double> mat(length, config.d);
    for (auto& e : mat.span()) e = positive ? pos(rng) : sym(rng);
    return mat;
  };
  p.x = draw(false);
  p.q = draw(positive_inputs);
  p.k = draw(positive_inputs);
  p.v = draw(false);
  p.functional = draw(false);
  return p;
}

template <typename T>
std::vector<double> pack(RuleParams<T> params, const Matrix<T>& x, const Matrix<T>& q,
                         const Matrix<T>& k, const Matrix<T>& v) {
  std::vector<double> out;
  for_each_tensor(params, [&](const char*, std::span<T> s) { out.insert(out.end(), s.begin(), s.end()); });
  for (const Matrix<T>* m : {&x, &q, &k, &v}) out.insert(out.end(), m->span().begin(), m->span().end());
  return out;
}

template <typename T>
void unpack(std::span<const double> theta, RuleParams<T>& params, Matrix<T>& x, Matrix<T>& q,
            Matrix<T>& k, Matrix<T>& v) {
  std::size_t offset = 0;
  auto take = [&](std::span<T> dst) {
    for (auto& e : dst) e = static_cast<T>(theta[offset++]);
  };
  for_each_tensor(params, [&](const char*, std::span<T> s) { take(s); });
  for (Matrix<T>* m : {&x, &q, &k, &v}) take(m->span());
}

template <typename T>
FdReport gradcheck_impl(const RuleConfig& config, std::uint64_t seed, std::size_t length,
                        double eps, double floor) {
  const RuleProblem base = make_problem(config, seed, length);
  const std::vector<double> theta = pack(base.params, base.x, base.q, base.k, base.v);

  RuleParams<T> params = zero_rule_params<T>(config);
  Matrix<T> x(length, config.d), q(length, config.d), k(length, config.d), v(length, config.d);
  unpack<T>(theta, params, x, q, k, v);
  const Matrix<T> functional = cast<T>(base.functional);
  const auto forward = scan<T>(config, params, x, q, k, v);
  const auto grads = backward_scan<T>(config, params, forward.cache, functional);
  const std::vector<double> analytic = pack(grads.params, grads.dx, grads.dq, grads.dk, grads.dv);

  // The reference loss runs in extended precision so that cancellation in
  // f(theta + eps) - f(theta - eps) stays far below the tolerance, including
  // at coordinates whose true derivative is exactly zero.
  auto loss = [&](std::span<const double> probe) {
    using E = long double;
    RuleParams<E> p = zero_rule_params<E>(config);
    Matrix<E> px(length, config.d), pq(length, config.d), pk(length, config.d), pv(length, config.d);
    unpack<E>(probe, p, px, pq, pk, pv);
    const auto y = scan<E>(config, p, px, pq, pk, pv).y;
    E total = 0.0L;
    for (std::size_t i = 0; i < y.size(); ++i)
      total += static_cast<E>(base.functional.span()[i]) * y.span()[i];
    return total;
  };
  return finite_difference_check_extended(loss, theta, analytic, eps, floor);
}

}  // namespace

FdReport gradcheck_rule(const RuleConfig& config, std::uint64_t seed, std::size_t length,
                        double eps) {
  return gradcheck_impl<double>(config, seed, length, eps, 1e-8);
}

FdReport gradcheck_rule_single(const RuleConfig& config, std::uint64_t seed, std::size_t length,
                               double eps) {
  return gradcheck_impl<float>(config, seed, length, eps, kSingleGradFloor);
}

std::vector<RuleConfig> legal_rule_configs(std::size_t d, std::size_t m) {
  std::vector<RuleConfig> out;
  for (RuleKind rule : {RuleKind::add, RuleKind::gated, RuleKind::delta, RuleKind::decay})
    for (FeatureMapKind map : {FeatureMapKind::identity, FeatureMapKind::linear,
                               FeatureMapKind::relu, FeatureMapKind::elu1})
      for (bool norm : {false, true})
        for (bool sum_norm : {false, true}) {
          if (rule == RuleKind::decay && norm) continue;
          RuleConfig c{rule, map, norm, sum_norm, d, preserves_dim(map) ? d : m};
          out.push_back(c);
        }
  return out;
}

#define FW_INSTANTIATE(T)                                                                    \
  template GradientBundle<T> backward_scan<T>(const RuleConfig&, const RuleParams<T>&,       \
                                              const SequenceCache<T>&, const Matrix<T>&);    \
  template void accumulate<T>(RuleParams<T>&, const RuleParams<T>&);                         \
  template RuleParams<T> random_rule_params<T>(const RuleConfig&, std::uint64_t);

FW_INSTANTIATE(float)
FW_INSTANTIATE(double)
#undef FW_INSTANTIATE

}  // namespace fw
