#ifndef CLUST3_OPTIM_HPP
#define CLUST3_OPTIM_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "tensor.hpp"

namespace clust3 {

// Named trainable tensor. `var` is persistent across forward passes; each
// forward builds a fresh tape referencing the same nodes, so gradients land
// in `var->grad`.
template <class T>
struct Parameter {
  std::string name;
  Var<T> var;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> value) : name(std::move(n)), var(make_var<T>(std::move(value), true)) {}

  Tensor<T>& value() { return var->value; }
  const Tensor<T>& value() const { return var->value; }
  Tensor<T>& grad() { return var->grad; }

  void zero_grad() { std::fill(var->grad.data.begin(), var->grad.data.end(), T(0)); }
};

template <class T>
struct SgdMomentum {
  T lr;
  T momentum = T(0.9);
  T weight_decay = T(0);
  std::map<std::string, Tensor<T>> velocity;

  void step(std::vector<Parameter<T>>& params, const std::set<std::string>& trainable) {
    for (auto& p : params) {
      if (!trainable.count(p.name)) continue;
      auto it = velocity.find(p.name);
      if (it == velocity.end())
        it = velocity.emplace(p.name, Tensor<T>::zeros(p.value().shape)).first;
      Tensor<T>& v = it->second;
      for (std::size_t i = 0; i < p.value().data.size(); ++i) {
        const T g = p.grad().data[i] + weight_decay * p.value().data[i];
        v.data[i] = momentum * v.data[i] + g;
        p.value().data[i] -= lr * v.data[i];
      }
    }
  }
};

template <class T>
struct Adam {
  T lr;
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  std::int64_t t = 0;
  std::map<std::string, Tensor<T>> m, v;

  void step(std::vector<Parameter<T>>& params, const std::set<std::string>& trainable) {
    ++t;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), static_cast<double>(t)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), static_cast<double>(t)));
    for (auto& p : params) {
      if (!trainable.count(p.name)) continue;
      auto mi = m.find(p.name);
      if (mi == m.end()) mi = m.emplace(p.name, Tensor<T>::zeros(p.value().shape)).first;
      auto vi = v.find(p.name);
      if (vi == v.end()) vi = v.emplace(p.name, Tensor<T>::zeros(p.value().shape)).first;
      Tensor<T>& mm = mi->second;
      Tensor<T>& vv = vi->second;
      for (std::size_t i = 0; i < p.value().data.size(); ++i) {
        const T g = p.grad().data[i];
        mm.data[i] = beta1 * mm.data[i] + (T(1) - beta1) * g;
        vv.data[i] = beta2 * vv.data[i] + (T(1) - beta2) * g * g;
        const T mhat = mm.data[i] / bc1;
        const T vhat = vv.data[i] / bc2;
        p.value().data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }
};

}  // namespace clust3

#endif
