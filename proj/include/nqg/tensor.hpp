// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "nqg/errors.hpp"
#include "nqg/rng.hpp"

namespace nqg {

// Dense row-major tensor of rank 0 (scalar), 1 or 2. The scalar type selects
// the precision: Tensor<float> for training, Tensor<double> for the
// gradient-check suites.
template <typename T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::vector<std::size_t> s, std::vector<T> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel()) {
      throw DimensionError("tensor data length does not match shape");
    }
  }

  static Tensor zeros(std::vector<std::size_t> s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return Tensor(std::move(s), std::vector<T>(n, T(0)));
  }

  static Tensor full(std::vector<std::size_t> s, T v) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return Tensor(std::move(s), std::vector<T>(n, v));
  }

  static Tensor scalar(T v) { return Tensor({}, {v}); }

  static Tensor vec(std::vector<T> vals) {
    std::size_t n = vals.size();
    return Tensor({n}, std::move(vals));
  }

  static Tensor uniform(std::vector<std::size_t> s, Rng& rng, T lo, T hi) {
    Tensor t = zeros(std::move(s));
    for (T& v : t.data) v = rng.uniform(lo, hi);
    return t;
  }

  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
  }

  std::size_t rank() const { return shape.size(); }

  std::size_t rows() const {
    if (rank() != 2) throw DimensionError("rows() requires a rank-2 tensor");
    return shape[0];
  }
  std::size_t cols() const {
    if (rank() != 2) throw DimensionError("cols() requires a rank-2 tensor");
    return shape[1];
  }

  T& at(std::size_t i) { return data[i]; }
  T at(std::size_t i) const { return data[i]; }
  T& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  T at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) os << 'x';
      os << shape[i];
    }
    os << ']';
    return os.str();
  }
};

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

}  // namespace nqg
