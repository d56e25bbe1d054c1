#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "fw/numeric.hpp"

namespace fw {

// Kernel feature maps applied to keys and queries before the recurrence.
// identity and elu1 keep the head dimension (m == d); linear and relu project
// to any m >= 1 with learned parameters.
enum class FeatureMapKind { identity, linear, relu, elu1 };

std::string_view to_string(FeatureMapKind kind);
FeatureMapKind parse_feature_map(std::string_view name);

constexpr bool has_weight(FeatureMapKind kind) {
  return kind == FeatureMapKind::linear || kind == FeatureMapKind::relu;
}
constexpr bool has_bias(FeatureMapKind kind) { return kind == FeatureMapKind::relu; }
constexpr bool preserves_dim(FeatureMapKind kind) { return !has_weight(kind); }
constexpr bool is_positive(FeatureMapKind kind) {
  return kind == FeatureMapKind::relu || kind == FeatureMapKind::elu1;
}

template <typename T>
struct FeatureMapParams {
  std::optional<Matrix<T>> weight;  // m x d
  std::optional<Vector<T>> bias;    // m

  bool operator==(const FeatureMapParams&) const = default;
};

// Throws ConfigError unless params and dimensions agree with `kind`.
template <typename T>
void validate_feature_map(FeatureMapKind kind, const FeatureMapParams<T>& params, std::size_t d,
                          std::size_t m);

template <typename T>
constexpr T sum_epsilon() {
  if constexpr (sizeof(T) <= sizeof(float)) return static_cast<T>(1e-6);
  else return static_cast<T>(1e-12);
}

// Writes phi(x) into out (length m). Writes the relu pre-activation into
// `pre` when it is non-empty.
template <typename T>
void apply_feature_map_into(FeatureMapKind kind, const FeatureMapParams<T>& params,
                            std::span<const T> x, std::span<T> out, std::span<T> pre = {});

template <typename T>
Vector<T> apply_feature_map(FeatureMapKind kind, const FeatureMapParams<T>& params,
                            const Vector<T>& x);

// Rescales u in place so its components sum to one. Throws NearZeroSum when
// |sum u| <= eps.
template <typename T>
void sum_normalize_inplace(std::span<T> u, T eps = sum_epsilon<T>());

template <typename T>
Vector<T> sum_normalize(const Vector<T>& u, T eps = sum_epsilon<T>());

}  // namespace fw
