#pragma once

// Direct (non-recurrent) attention used as oracles and baselines.

#include <cstddef>

#include "fw/numeric.hpp"

namespace fw {

template <typename T>
struct AttentionInputs {
  Matrix<T> q, k, v;  // T x d each
};

// Causal softmax attention with exp(k . q / sqrt(d)) similarity.
template <typename T>
Matrix<T> softmax_attention(const AttentionInputs<T>& in);

// Softmax attention restricted to the `window` most recent tokens,
// including the current one.
template <typename T>
Matrix<T> local_attention(const AttentionInputs<T>& in, std::size_t window);

// y_t = sum_{j<=t} v_j (phi_k_j . phi_q_t) / sum_{i<=t} (phi_k_i . phi_q_t),
// evaluated as the literal double loop. Throws NormalizerUnderflow when the
// denominator magnitude is at most `eps`.
template <typename T>
Matrix<T> kernel_attention_direct(const Matrix<T>& phi_k, const Matrix<T>& phi_q,
                                  const Matrix<T>& v, T eps);

}  // namespace fw
