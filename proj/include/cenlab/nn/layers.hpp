#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cenlab/nn/graph.hpp"
#include "cenlab/nn/tensor.hpp"
#include "cenlab/rng.hpp"

namespace cenlab::nn {

template <typename T>
struct ConvHandle {
  ParamTensorT<T>* w = nullptr;
  ParamTensorT<T>* b = nullptr;
};

template <typename T>
struct LinHandle {
  ParamTensorT<T>* w = nullptr;
  ParamTensorT<T>* b = nullptr;
};

template <typename T>
struct BnHandle {
  ParamTensorT<T>* gamma = nullptr;
  ParamTensorT<T>* beta = nullptr;
  BatchNormBuffersT<T>* stats = nullptr;
};

// Owns every parameter and batch-norm buffer of a model, in registration
// order. Checkpoint layout and optimizer state both key off that order.
template <typename T>
class ParamStoreT {
 public:
  ParamTensorT<T>* add(const std::string& name, std::vector<int> shape,
                       size_t fan_in, CounterRng* rng) {
    params_.push_back(std::make_unique<ParamTensorT<T>>(name, std::move(shape)));
    if (rng) kaiming_uniform(params_.back()->value, fan_in, *rng);
    return params_.back().get();
  }

  // conv weights [out, in, k, k], zero bias
  ConvHandle<T> conv(const std::string& base, int out, int in, int k,
                     CounterRng& rng) {
    ConvHandle<T> l;
    l.w = add(base + ".w", {out, in, k, k}, static_cast<size_t>(in) * k * k, &rng);
    l.b = add(base + ".b", {out}, 1, nullptr);
    return l;
  }

  // transposed-conv weights [in, out, k, k], zero bias
  ConvHandle<T> tconv(const std::string& base, int in, int out, int k,
                      CounterRng& rng) {
    ConvHandle<T> l;
    l.w = add(base + ".w", {in, out, k, k}, static_cast<size_t>(in) * k * k, &rng);
    l.b = add(base + ".b", {out}, 1, nullptr);
    return l;
  }

  LinHandle<T> lin(const std::string& base, int out, int in, CounterRng& rng) {
    LinHandle<T> l;
    l.w = add(base + ".w", {out, in}, static_cast<size_t>(in), &rng);
    l.b = add(base + ".b", {out}, 1, nullptr);
    return l;
  }

  BnHandle<T> bn(const std::string& base, int c) {
    BnHandle<T> l;
    l.gamma = add(base + ".gamma", {c}, 1, nullptr);
    for (T& x : l.gamma->value.v) x = T(1);
    l.beta = add(base + ".beta", {c}, 1, nullptr);
    buffers_.emplace_back(base, std::make_unique<BatchNormBuffersT<T>>(c));
    l.stats = buffers_.back().second.get();
    return l;
  }

  std::vector<ParamTensorT<T>*> parameters() {
    std::vector<ParamTensorT<T>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  ParamTensorT<T>& parameter(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return *p;
    throw std::invalid_argument("no such parameter: " + name);
  }

  // parameters plus batch-norm running buffers, stable order
  std::vector<std::pair<std::string, TensorT<T>*>> named_tensors() {
    std::vector<std::pair<std::string, TensorT<T>*>> out;
    for (auto& p : params_) out.emplace_back(p->name, &p->value);
    for (auto& [name, stats] : buffers_) {
      out.emplace_back(name + ".running_mean", &stats->running_mean);
      out.emplace_back(name + ".running_var", &stats->running_var);
    }
    return out;
  }

  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<ParamTensorT<T>>> params_;
  std::vector<std::pair<std::string, std::unique_ptr<BatchNormBuffersT<T>>>> buffers_;
};

template <typename T>
typename GraphT<T>::Var apply_bn(GraphT<T>& g, typename GraphT<T>::Var x,
                                 const BnHandle<T>& l, bool train) {
  return g.batch_norm(x, g.param(*l.gamma), g.param(*l.beta), *l.stats, train);
}

template <typename T>
typename GraphT<T>::Var apply_lin(GraphT<T>& g, typename GraphT<T>::Var x,
                                  const LinHandle<T>& l) {
  return g.linear(x, g.param(*l.w), g.param(*l.b));
}

}  // namespace cenlab::nn
