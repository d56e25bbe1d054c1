#include "fw/reference_attention.hpp"

#include <vector>

namespace fw {

namespace {

template <typename T>
void check_inputs(const AttentionInputs<T>& in) {
  if (!in.q.same_shape(in.k) || !in.q.same_shape(in.v))
    throw DimensionMismatch("attention: Q, K, V must share T x d");
}

template <typename T>
Matrix<T> windowed(const AttentionInputs<T>& in, std::size_t window) {
  check_inputs(in);
  const std::size_t len = in.q.rows();
  const std::size_t d = in.q.cols();
  const T scale = T{1} / std::sqrt(static_cast<T>(d));
  Matrix<T> y(len, d);
  std::vector<T> w;
  for (std::size_t t = 0; t < len; ++t) {
    const std::size_t first = t + 1 > window ? t + 1 - window : 0;
    w.assign(t + 1 - first, T{0});
    for (std::size_t j = first; j <= t; ++j)
      w[j - first] = dot<T>(in.k.row(j), in.q.row(t)) * scale;
    softmax_inplace<T>(w);
    for (std::size_t j = first; j <= t; ++j)
      for (std::size_t c = 0; c < d; ++c) y(t, c) += w[j - first] * in.v(j, c);
  }
  return y;
}

}  // namespace

template <typename T>
Matrix<T> softmax_attention(const AttentionInputs<T>& in) {
  return windowed(in, in.q.rows());
}

template <typename T>
Matrix<T> local_attention(const AttentionInputs<T>& in, std::size_t window) {
  if (window == 0) throw ConfigError("local attention window must be >= 1");
  return windowed(in, window);
}

template <typename T>
Matrix<T> kernel_attention_direct(const Matrix<T>& phi_k, const Matrix<T>& phi_q,
                                  const Matrix<T>& v, T eps) {
  if (!phi_k.same_shape(phi_q) || phi_k.rows() != v.rows())
    throw DimensionMismatch("kernel attention: phi(K), phi(Q) must be T x m and V T x d");
  const std::size_t len = v.rows();
  const std::size_t d = v.cols();
  Matrix<T> y(len, d);
  for (std::size_t t = 0; t < len; ++t) {
    T den{0};
    for (std::size_t i = 0; i <= t; ++i) den += dot<T>(phi_k.row(i), phi_q.row(t));
    if (!(std::abs(den) > eps)) throw NormalizerUnderflow("kernel attention denominator", t);
    for (std::size_t j = 0; j <= t; ++j) {
      const T sim = dot<T>(phi_k.row(j), phi_q.row(t));
      for (std::size_t c = 0; c < d; ++c) y(t, c) += v(j, c) * sim;
    }
    for (std::size_t c = 0; c < d; ++c) y(t, c) /= den;
  }
  return y;
}

#define FW_INSTANTIATE(T)                                                              \
  template Matrix<T> softmax_attention<T>(const AttentionInputs<T>&);                  \
  template Matrix<T> local_attention<T>(const AttentionInputs<T>&, std::size_t);       \
  template Matrix<T> kernel_attention_direct<T>(const Matrix<T>&, const Matrix<T>&,    \
                                                const Matrix<T>&, T);

FW_INSTANTIATE(float)
FW_INSTANTIATE(double)
#undef FW_INSTANTIATE

}  // namespace fw
