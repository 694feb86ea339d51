#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "cenlab/rng.hpp"

namespace cenlab::nn {

template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> v;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
    v.assign(count(shape), T(0));
  }
  TensorT(std::vector<int> s, std::vector<T> data)
      : shape(std::move(s)), v(std::move(data)) {
    if (v.size() != count(shape)) throw std::invalid_argument("tensor data/shape mismatch");
  }

  static size_t count(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  size_t size() const { return v.size(); }
  int dim(size_t i) const { return shape.at(i); }
  void zero() { std::fill(v.begin(), v.end(), T(0)); }

  bool operator==(const TensorT&) const = default;
};

using Tensor = TensorT<float>;

// Persistent learnable parameter: value plus gradient of identical shape.
template <typename T>
struct ParamTensorT {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;

  ParamTensorT(std::string n, std::vector<int> shape)
      : name(std::move(n)), value(shape), grad(std::move(shape)) {}

  void zero_grad() { grad.zero(); }
};

using ParamTensor = ParamTensorT<float>;

// Kaiming-uniform fill: limit sqrt(6 / fan_in), the ReLU-gain variant.
template <typename T>
void kaiming_uniform(TensorT<T>& t, size_t fan_in, CounterRng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (T& x : t.v) x = static_cast<T>((2.0 * rng.unit() - 1.0) * limit);
}

}  // namespace cenlab::nn
