#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cenlab/nn/tensor.hpp"

namespace cenlab::nn {

// ADAM with bias correction. Moment buffers are lazily shaped to the
// parameter list on the first step and must match thereafter.
template <typename T>
struct AdamT {
  T lr;
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  int64_t t = 0;
  std::vector<TensorT<T>> m, v;

  explicit AdamT(T learning_rate) : lr(learning_rate) {}

  void step(const std::vector<ParamTensorT<T>*>& params) {
    if (m.empty()) {
      for (auto* p : params) {
        m.emplace_back(p->value.shape);
        v.emplace_back(p->value.shape);
      }
    }
    if (m.size() != params.size()) throw std::invalid_argument("adam: parameter list changed");
    ++t;
    double bc1 = 1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(t));
    double bc2 = 1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
      ParamTensorT<T>& p = *params[i];
      if (p.value.shape != m[i].shape) throw std::invalid_argument("adam: shape changed");
      for (size_t j = 0; j < p.value.size(); ++j) {
        T g = p.grad.v[j];
        if (!std::isfinite(static_cast<double>(g)))
          throw std::runtime_error("adam: non-finite gradient in " + p.name);
        m[i].v[j] = beta1 * m[i].v[j] + (T(1) - beta1) * g;
        v[i].v[j] = beta2 * v[i].v[j] + (T(1) - beta2) * g * g;
        double mhat = m[i].v[j] / bc1;
        double vhat = v[i].v[j] / bc2;
        p.value.v[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }
};

using Adam = AdamT<float>;

}  // namespace cenlab::nn
