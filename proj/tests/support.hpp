#pragma once

#include <random>

#include "fw/numeric.hpp"

namespace fwtest {

template <typename T>
fw::Matrix<T> random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  fw::Matrix<T> m(rows, cols);
  for (auto& e : m.span()) e = static_cast<T>(u(rng));
  return m;
}

template <typename T>
fw::Vector<T> random_vector(std::size_t len, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  fw::Vector<T> v(len);
  for (auto& e : v) e = static_cast<T>(u(rng));
  return v;
}

inline std::vector<int> random_tokens(std::size_t n, int vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, vocab - 1);
  std::vector<int> out(n);
  for (auto& t : out) t = d(rng);
  return out;
}

}  // namespace fwtest
