#pragma once

// Row-parallel batched kernels used by the language model. Every kernel has
// a serial reference (Exec::serial) and an OpenMP version (Exec::parallel)
// that run the same per-row body; parallelism is only ever across rows or
// output columns, never inside a reduction, so both produce identical bits.

#include <cmath>
#include <cstddef>
#include <span>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fw/numeric.hpp"

namespace fw::kernels {

enum class Exec { serial, parallel };

template <Exec E, typename Body>
void for_each_index(std::size_t n, Body&& body) {
  if constexpr (E == Exec::parallel) {
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < n; ++i) body(i);
  }
}

int max_threads();

// Restricts OpenMP to `n` threads for the lifetime of the guard.
class ScopedThreadLimit {
 public:
  explicit ScopedThreadLimit(int n);
  ~ScopedThreadLimit();
  ScopedThreadLimit(const ScopedThreadLimit&) = delete;
  ScopedThreadLimit& operator=(const ScopedThreadLimit&) = delete;

 private:
  int previous_;
};

template <typename T>
Matrix<T> transpose(const Matrix<T>& m) {
  Matrix<T> out(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
  return out;
}

namespace detail {
inline void check(bool ok, const char* what) {
  if (!ok) throw DimensionMismatch(what);
}
}  // namespace detail

// y = x w + bias, with x: N x in, w: in x out (the "x W" layout), y: N x out.
template <Exec E = Exec::parallel, typename T>
void linear(const Matrix<T>& x, const Matrix<T>& w, std::span<const T> bias, Matrix<T>& y) {
  detail::check(x.cols() == w.rows(), "linear: x.cols != w.rows");
  detail::check(bias.empty() || bias.size() == w.cols(), "linear: bias length");
  if (y.rows() != x.rows() || y.cols() != w.cols()) y = Matrix<T>(x.rows(), w.cols());
  const std::size_t in = w.rows();
  const std::size_t out = w.cols();
  for_each_index<E>(x.rows(), [&](std::size_t n) {
    T* yr = y.row(n).data();
    const T* xr = x.row(n).data();
    for (std::size_t o = 0; o < out; ++o) yr[o] = bias.empty() ? T{0} : bias[o];
    for (std::size_t i = 0; i < in; ++i) {
      const T a = xr[i];
      const T* wr = w.row(i).data();
      for (std::size_t o = 0; o < out; ++o) yr[o] += a * wr[o];
    }
  });
}

// dx = dy w^T (overwrites dx).
template <Exec E = Exec::parallel, typename T>
void linear_input_grad(const Matrix<T>& dy, const Matrix<T>& w, Matrix<T>& dx) {
  detail::check(dy.cols() == w.cols(), "linear_input_grad: dy.cols != w.cols");
  const Matrix<T> wt = transpose(w);
  dx = Matrix<T>(dy.rows(), w.rows());
  const std::size_t in = w.rows();
  const std::size_t out = w.cols();
  for_each_index<E>(dy.rows(), [&](std::size_t n) {
    T* xr = dx.row(n).data();
    const T* gr = dy.row(n).data();
    for (std::size_t o = 0; o < out; ++o) {
      const T a = gr[o];
      const T* wr = wt.row(o).data();
      for (std::size_t i = 0; i < in; ++i) xr[i] += a * wr[i];
    }
  });
}

// dw += x^T dy and dbias += column sums of dy (summed over rows in order).
template <Exec E = Exec::parallel, typename T>
void linear_weight_grad(const Matrix<T>& x, const Matrix<T>& dy, Matrix<T>& dw,
                        std::span<T> dbias) {
  detail::check(x.rows() == dy.rows(), "linear_weight_grad: row mismatch");
  detail::check(dw.rows() == x.cols() && dw.cols() == dy.cols(), "linear_weight_grad: dw shape");
  const std::size_t out = dy.cols();
  for_each_index<E>(x.cols(), [&](std::size_t i) {
    T* wr = dw.row(i).data();
    for (std::size_t n = 0; n < x.rows(); ++n) {
      const T a = x(n, i);
      const T* gr = dy.row(n).data();
      for (std::size_t o = 0; o < out; ++o) wr[o] += a * gr[o];
    }
  });
  if (!dbias.empty()) {
    detail::check(dbias.size() == out, "linear_weight_grad: dbias length");
    for (std::size_t n = 0; n < dy.rows(); ++n) {
      const T* gr = dy.row(n).data();
      for (std::size_t o = 0; o < out; ++o) dbias[o] += gr[o];
    }
  }
}

template <typename T>
struct LayerNormCache {
  Matrix<T> normalized;
  std::vector<T> inv_std;
};

inline constexpr double kLayerNormEps = 1e-5;

template <Exec E = Exec::parallel, typename T>
void layer_norm(const Matrix<T>& x, std::span<const T> gain, std::span<const T> bias,
                Matrix<T>& y, LayerNormCache<T>* cache) {
  detail::check(gain.size() == x.cols() && bias.size() == x.cols(), "layer_norm: param length");
  const std::size_t n_rows = x.rows();
  const std::size_t width = x.cols();
  y = Matrix<T>(n_rows, width);
  if (cache) {
    cache->normalized = Matrix<T>(n_rows, width);
    cache->inv_std.assign(n_rows, T{0});
  }
  for_each_index<E>(n_rows, [&](std::size_t n) {
    const auto xr = x.row(n);
    T mean{0};
    for (T v : xr) mean += v;
    mean /= static_cast<T>(width);
    T var{0};
    for (T v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<T>(width);
    const T inv_std = T{1} / std::sqrt(var + static_cast<T>(kLayerNormEps));
    auto yr = y.row(n);
    for (std::size_t c = 0; c < width; ++c) {
      const T xhat = (xr[c] - mean) * inv_std;
      if (cache) cache->normalized(n, c) = xhat;
      yr[c] = xhat * gain[c] + bias[c];
    }
    if (cache) cache->inv_std[n] = inv_std;
  });
}

// Overwrites dx; accumulates dgain/dbias.
template <Exec E = Exec::parallel, typename T>
void layer_norm_backward(const Matrix<T>& dy, std::span<const T> gain,
                         const LayerNormCache<T>& cache, Matrix<T>& dx, std::span<T> dgain,
                         std::span<T> dbias) {
  const std::size_t n_rows = dy.rows();
  const std::size_t width = dy.cols();
  dx = Matrix<T>(n_rows, width);
  for_each_index<E>(n_rows, [&](std::size_t n) {
    const auto gr = dy.row(n);
    const auto xh = cache.normalized.row(n);
    T mean_g{0};
    T mean_gx{0};
    for (std::size_t c = 0; c < width; ++c) {
      const T g = gr[c] * gain[c];
      mean_g += g;
      mean_gx += g * xh[c];
    }
    mean_g /= static_cast<T>(width);
    mean_gx /= static_cast<T>(width);
    auto out = dx.row(n);
    for (std::size_t c = 0; c < width; ++c)
      out[c] = cache.inv_std[n] * (gr[c] * gain[c] - mean_g - xh[c] * mean_gx);
  });
  for (std::size_t n = 0; n < n_rows; ++n) {
    const auto gr = dy.row(n);
    const auto xh = cache.normalized.row(n);
    for (std::size_t c = 0; c < width; ++c) {
      dgain[c] += gr[c] * xh[c];
      dbias[c] += gr[c];
    }
  }
}

// tanh(u) = 1 - 2 / (exp(2u) + 1). Several times cheaper than std::tanh in
// glibc; absolute error stays at roundoff, which is all GELU needs.
template <typename T>
T tanh_via_exp(T u) {
  return T{1} - T{2} / (std::exp(T{2} * u) + T{1});
}

// Tanh-approximated GELU.
template <typename T>
T gelu(T x) {
  const T c = static_cast<T>(0.7978845608028654);
  return T{0.5} * x * (T{1} + tanh_via_exp(c * (x + static_cast<T>(0.044715) * x * x * x)));
}

template <typename T>
T gelu_derivative(T x) {
  const T c = static_cast<T>(0.7978845608028654);
  const T k = static_cast<T>(0.044715);
  const T t = tanh_via_exp(c * (x + k * x * x * x));
  return T{0.5} * (T{1} + t) + T{0.5} * x * (T{1} - t * t) * c * (T{1} + T{3} * k * x * x);
}

template <Exec E = Exec::parallel, typename T>
void gelu_forward(const Matrix<T>& x, Matrix<T>& y) {
  y = Matrix<T>(x.rows(), x.cols());
  for_each_index<E>(x.rows(), [&](std::size_t n) {
    const auto xr = x.row(n);
    auto yr = y.row(n);
    for (std::size_t c = 0; c < xr.size(); ++c) yr[c] = gelu(xr[c]);
  });
}

// dx = dy * gelu'(x) (overwrites dx).
template <Exec E = Exec::parallel, typename T>
void gelu_backward(const Matrix<T>& x, const Matrix<T>& dy, Matrix<T>& dx) {
  dx = Matrix<T>(x.rows(), x.cols());
  for_each_index<E>(x.rows(), [&](std::size_t n) {
    const auto xr = x.row(n);
    const auto gr = dy.row(n);
    auto out = dx.row(n);
    for (std::size_t c = 0; c < xr.size(); ++c) out[c] = gr[c] * gelu_derivative(xr[c]);
  });
}

// Mean next-token cross-entropy over rows with a target >= 0. Writes the
// gradient with respect to the logits into dlogits when non-null.
template <Exec E = Exec::parallel, typename T>
double cross_entropy(const Matrix<T>& logits, std::span<const int> targets, Matrix<T>* dlogits,
                     std::vector<double>* per_row_nll = nullptr) {
  detail::check(targets.size() == logits.rows(), "cross_entropy: target count");
  std::size_t scored = 0;
  for (int t : targets) scored += t >= 0 ? 1 : 0;
  std::vector<double> nll(logits.rows(), 0.0);
  if (dlogits) *dlogits = Matrix<T>(logits.rows(), logits.cols());
  const T scale = scored == 0 ? T{0} : T{1} / static_cast<T>(scored);
  for_each_index<E>(logits.rows(), [&](std::size_t n) {
    if (targets[n] < 0) return;
    const auto lr = logits.row(n);
    T peak = lr[0];
    for (T v : lr) peak = std::max(peak, v);
    T total{0};
    for (T v : lr) total += std::exp(v - peak);
    const T log_z = std::log(total) + peak;
    nll[n] = static_cast<double>(log_z - lr[static_cast<std::size_t>(targets[n])]);
    if (dlogits) {
      auto gr = dlogits->row(n);
      for (std::size_t c = 0; c < lr.size(); ++c) gr[c] = std::exp(lr[c] - log_z) * scale;
      gr[static_cast<std::size_t>(targets[n])] -= scale;
    }
  });
  double sum = 0.0;
  for (double v : nll) sum += v;
  if (per_row_nll) *per_row_nll = std::move(nll);
  return scored == 0 ? 0.0 : sum / static_cast<double>(scored);
}

}  // namespace fw::kernels
