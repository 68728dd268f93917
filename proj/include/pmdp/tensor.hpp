#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmdp {

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dense row-major array of 64-bit reals. Rank 0 is a scalar (one element).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s)
      : shape(std::move(s)), data(numel_of(shape), 0.0) {}

  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape)) {
      throw DimensionError("tensor data length does not match shape");
    }
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           std::multiplies<>());
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<std::size_t> s, double v) {
    Tensor t(std::move(s));
    for (double& x : t.data) x = v;
    return t;
  }

  static Tensor row(std::vector<double> d) {
    std::size_t n = d.size();
    return Tensor({1, n}, std::move(d));
  }

  static Tensor vec(std::vector<double> d) {
    std::size_t n = d.size();
    return Tensor({n}, std::move(d));
  }

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  bool is_scalar() const { return numel() == 1; }

  // Matrix accessors; rank-1 tensors are treated as a single row.
  std::size_t rows() const { return shape.size() >= 2 ? shape[0] : 1; }
  std::size_t cols() const {
    if (shape.size() >= 2) return shape[1];
    return shape.size() == 1 ? shape[0] : 1;
  }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  double value() const {
    if (!is_scalar()) throw ContractError("tensor is not a scalar");
    return data[0];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

inline std::string shape_str(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.shape[i]);
  }
  return s + "]";
}

}  // namespace pmdp
