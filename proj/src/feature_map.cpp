#include "fw/feature_map.hpp"

namespace fw {

std::string_view to_string(FeatureMapKind kind) {
  switch (kind) {
    case FeatureMapKind::identity: return "identity";
    case FeatureMapKind::linear: return "linear";
    case FeatureMapKind::relu: return "relu";
    case FeatureMapKind::elu1: return "elu1";
  }
  return "?";
}

FeatureMapKind parse_feature_map(std::string_view name) {
  if (name == "identity") return FeatureMapKind::identity;
  if (name == "linear") return FeatureMapKind::linear;
  if (name == "relu") return FeatureMapKind::relu;
  if (name == "elu1") return FeatureMapKind::elu1;
  throw ConfigError("unknown feature map '" + std::string(name) + "'");
}

template <typename T>
void validate_feature_map(FeatureMapKind kind, const FeatureMapParams<T>& params, std::size_t d,
                          std::size_t m) {
  if (m == 0 || d == 0) throw ConfigError("feature map dimensions must be positive");
  if (preserves_dim(kind) && m != d)
    throw ConfigError(std::string(to_string(kind)) + " feature map requires m == d");
  if (params.weight.has_value() != has_weight(kind))
    throw ConfigError(std::string(to_string(kind)) + " feature map: weight presence mismatch");
  if (params.bias.has_value() != has_bias(kind))
    throw ConfigError(std::string(to_string(kind)) + " feature map: bias presence mismatch");
  if (params.weight && (params.weight->rows() != m || params.weight->cols() != d))
    throw DimensionMismatch("feature map weight must be m x d");
  if (params.bias && params.bias->size() != m)
    throw DimensionMismatch("feature map bias must have length m");
}

template <typename T>
void apply_feature_map_into(FeatureMapKind kind, const FeatureMapParams<T>& params,
                            std::span<const T> x, std::span<T> out, std::span<T> pre) {
  switch (kind) {
    case FeatureMapKind::identity:
      if (out.size() != x.size()) throw DimensionMismatch("identity feature map: m != d");
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i];
      return;
    case FeatureMapKind::elu1:
      if (out.size() != x.size()) throw DimensionMismatch("elu1 feature map: m != d");
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = elu1(x[i]);
      return;
    case FeatureMapKind::linear:
    case FeatureMapKind::relu: {
      if (!params.weight) throw ConfigError("feature map weight missing");
      const Matrix<T>& w = *params.weight;
      if (w.cols() != x.size() || w.rows() != out.size())
        throw DimensionMismatch("feature map weight shape does not match input/output");
      const bool rectify = kind == FeatureMapKind::relu;
      if (rectify && !params.bias) throw ConfigError("relu feature map bias missing");
      for (std::size_t r = 0; r < w.rows(); ++r) {
        T acc{0};
        const auto row = w.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) acc += row[c] * x[c];
        if (rectify) {
          acc += (*params.bias)[r];
          if (!pre.empty()) pre[r] = acc;
          out[r] = relu(acc);
        } else {
          out[r] = acc;
        }
      }
      return;
    }
  }
}

template <typename T>
Vector<T> apply_feature_map(FeatureMapKind kind, const FeatureMapParams<T>& params,
                            const Vector<T>& x) {
  const std::size_t m = has_weight(kind) && params.weight ? params.weight->rows() : x.size();
  Vector<T> out(m);
  apply_feature_map_into<T>(kind, params, x.span(), out.span());
  return out;
}

template <typename T>
void sum_normalize_inplace(std::span<T> u, T eps) {
  T total{0};
  for (T v : u) total += v;
  if (!(std::abs(total) > eps))
    throw NearZeroSum("|sum| = " + std::to_string(static_cast<double>(std::abs(total))));
  for (auto& v : u) v /= total;
}

template <typename T>
Vector<T> sum_normalize(const Vector<T>& u, T eps) {
  Vector<T> out = u;
  sum_normalize_inplace<T>(out.span(), eps);
  return out;
}

#define FW_INSTANTIATE(T)                                                                   \
  template void validate_feature_map<T>(FeatureMapKind, const FeatureMapParams<T>&,         \
                                        std::size_t, std::size_t);                          \
  template void apply_feature_map_into<T>(FeatureMapKind, const FeatureMapParams<T>&,       \
                                          std::span<const T>, std::span<T>, std::span<T>);  \
  template Vector<T> apply_feature_map<T>(FeatureMapKind, const FeatureMapParams<T>&,       \
                                          const Vector<T>&);                                \
  template void sum_normalize_inplace<T>(std::span<T>, T);                                  \
  template Vector<T> sum_normalize<T>(const Vector<T>&, T);

FW_INSTANTIATE(float)
FW_INSTANTIATE(double)
FW_INSTANTIATE(long double)
#undef FW_INSTANTIATE

}  // namespace fw
