#pragma once

// Small dense linear algebra shared by every module. All reductions sum in
// ascending index order so results are reproducible across call sites.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "fw/errors.hpp"

namespace fw {

template <typename T>
class Vector {
 public:
  using value_type = T;

  Vector() = default;
  explicit Vector(std::size_t len, T fill = T{0}) : data_(len, fill) {}
  explicit Vector(std::vector<T> data) : data_(std::move(data)) {}
  Vector(std::initializer_list<T> values) : data_(values) {}

  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  const std::vector<T>& values() const noexcept { return data_; }

  bool operator==(const Vector&) const = default;

 private:
  std::vector<T> data_;
};

// Row-major dense matrix.
template <typename T>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{0})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw DimensionMismatch("matrix data length " + std::to_string(data_.size()) +
                              " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
  }
  Matrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionMismatch("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T{1};
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols_ + c];
  }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename U, typename T>
Matrix<U> cast(const Matrix<T>& m) {
  std::vector<U> out(m.span().begin(), m.span().end());
  return Matrix<U>(m.rows(), m.cols(), std::move(out));
}

template <typename U, typename T>
Vector<U> cast(const Vector<T>& v) {
  return Vector<U>(std::vector<U>(v.begin(), v.end()));
}

// Scalar functions.

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

// Inverse of sigmoid; u must lie in (0, 1).
template <typename T>
T logit(T u) {
  return std::log(u / (T{1} - u));
}

template <typename T>
T relu(T x) {
  return x > T{0} ? x : T{0};
}

// ELU(x) + 1: x + 1 for x >= 0, exp(x) otherwise. Strictly positive.
template <typename T>
T elu1(T x) {
  return x >= T{0} ? x + T{1} : std::exp(x);
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw DimensionMismatch("dot: length mismatch");
  T acc{0};
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
T dot(const Vector<T>& a, const Vector<T>& b) {
  return dot<T>(a.span(), b.span());
}

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

// y = A x
template <typename T>
Vector<T> matvec(const Matrix<T>& a, const Vector<T>& x) {
  if (a.cols() != x.size())
    throw DimensionMismatch("matvec: A is " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + ", x has " + std::to_string(x.size()));
  Vector<T> y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T acc{0};
    const auto row = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) acc += row[j] * x[j];
    y[i] = acc;
  }
  return y;
}

// y = A^T x
template <typename T>
Vector<T> matvec_transposed(const Matrix<T>& a, const Vector<T>& x) {
  if (a.rows() != x.size()) throw DimensionMismatch("matvec_transposed: shape mismatch");
  Vector<T> y(a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto row = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += row[j] * x[i];
  }
  return y;
}

template <typename T>
Matrix<T> outer(const Vector<T>& u, const Vector<T>& w) {
  Matrix<T> m(u.size(), w.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < w.size(); ++j) m(i, j) = u[i] * w[j];
  return m;
}

enum class ElementOp { mul, add, sub, sigmoid, relu, elu1, exp };

constexpr bool is_binary(ElementOp op) {
  return op == ElementOp::mul || op == ElementOp::add || op == ElementOp::sub;
}

namespace detail {

template <typename T>
T apply_unary(ElementOp op, T x) {
  switch (op) {
    case ElementOp::sigmoid: return sigmoid(x);
    case ElementOp::relu: return relu(x);
    case ElementOp::elu1: return elu1(x);
    case ElementOp::exp: return std::exp(x);
    default: break;
  }
  throw std::invalid_argument("elementwise: binary op used as unary");
}

template <typename T>
T apply_binary(ElementOp op, T a, T b) {
  switch (op) {
    case ElementOp::mul: return a * b;
    case ElementOp::add: return a + b;
    case ElementOp::sub: return a - b;
    default: break;
  }
  throw std::invalid_argument("elementwise: unary op used as binary");
}

template <typename T>
void unary_into(ElementOp op, std::span<const T> in, std::span<T> out) {
  if (is_binary(op)) throw std::invalid_argument("elementwise: binary op needs two operands");
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = apply_unary(op, in[i]);
}

template <typename T>
void binary_into(ElementOp op, std::span<const T> a, std::span<const T> b, std::span<T> out) {
  if (!is_binary(op)) throw std::invalid_argument("elementwise: unary op given two operands");
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply_binary(op, a[i], b[i]);
}

}  // namespace detail

template <typename T>
Matrix<T> elementwise(ElementOp op, const Matrix<T>& a) {
  Matrix<T> out(a.rows(), a.cols());
  detail::unary_into<T>(op, a.span(), out.span());
  return out;
}

template <typename T>
Matrix<T> elementwise(ElementOp op, const Matrix<T>& a, const Matrix<T>& b) {
  if (!a.same_shape(b)) throw DimensionMismatch("elementwise: shape mismatch");
  Matrix<T> out(a.rows(), a.cols());
  detail::binary_into<T>(op, a.span(), b.span(), out.span());
  return out;
}

template <typename T>
Vector<T> elementwise(ElementOp op, const Vector<T>& a) {
  Vector<T> out(a.size());
  detail::unary_into<T>(op, a.span(), out.span());
  return out;
}

template <typename T>
Vector<T> elementwise(ElementOp op, const Vector<T>& a, const Vector<T>& b) {
  if (a.size() != b.size()) throw DimensionMismatch("elementwise: length mismatch");
  Vector<T> out(a.size());
  detail::binary_into<T>(op, a.span(), b.span(), out.span());
  return out;
}

// In-place softmax over a contiguous span, max-subtracted.
template <typename T>
void softmax_inplace(std::span<T> x) {
  if (x.empty()) return;
  T peak = x[0];
  for (T v : x) peak = std::max(peak, v);
  T total{0};
  for (auto& v : x) {
    v = std::exp(v - peak);
    total += v;
  }
  for (auto& v : x) v /= total;
}

template <typename T>
Vector<T> softmax(const Vector<T>& x) {
  Vector<T> out = x;
  softmax_inplace<T>(out.span());
  return out;
}

template <typename T>
T max_abs_diff(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw DimensionMismatch("max_abs_diff: length mismatch");
  T worst{0};
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

template <typename T>
T max_abs_diff(const Matrix<T>& a, const Matrix<T>& b) {
  if (!a.same_shape(b)) throw DimensionMismatch("max_abs_diff: shape mismatch");
  return max_abs_diff<T>(a.span(), b.span());
}

template <typename T>
T max_abs(std::span<const T> a) {
  T worst{0};
  for (T v : a) worst = std::max(worst, std::abs(v));
  return worst;
}

}  // namespace fw
