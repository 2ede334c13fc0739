#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "persona/error.hpp"

namespace persona::numerics {

template <std::floating_point Real>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<Real> values;
  std::vector<Real> grad;  // empty until first zero_grad()/accumulation
  bool requires_grad = true;

  Tensor() = default;
  Tensor(std::vector<std::size_t> dims, std::vector<Real> data, bool needs_grad = true)
      : shape(std::move(dims)), values(std::move(data)), requires_grad(needs_grad) {
    require(element_count(shape) == values.size(), "tensor: shape does not match value count");
  }

  static Tensor zeros(std::vector<std::size_t> dims, bool needs_grad = true) {
    const std::size_t n = element_count(dims);
    return Tensor(std::move(dims), std::vector<Real>(n, Real(0)), needs_grad);
  }
  static Tensor scalar(Real v, bool needs_grad = true) { return Tensor({1}, {v}, needs_grad); }
  static Tensor vector(std::vector<Real> v, bool needs_grad = true) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v), needs_grad);
  }

  static std::size_t element_count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return values.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape.front(); }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  void zero_grad() { grad.assign(values.size(), Real(0)); }

  void fill_uniform(std::mt19937_64& rng, Real lo, Real hi) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& v : values) v = static_cast<Real>(dist(rng));
  }
};

// A tensor with its parameter name; the unit finite-difference checks iterate over.
template <std::floating_point Real>
struct NamedTensor {
  std::string name;
  Tensor<Real>* tensor;
};

}  // namespace persona::numerics
