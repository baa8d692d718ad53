#pragma once

#include <cmath>
#include <vector>

#include "sam/params.hpp"

namespace sam {

// Minibatch SGD with optional Nesterov momentum, applied to the trainable
// entries of a store in index order.
template <class S>
class SgdT {
 public:
  SgdT(S lr, S momentum = S(0), bool nesterov = false)
      : lr_(lr), momentum_(momentum), nesterov_(nesterov) {}

  void step(ParamStoreT<S>& store, const std::vector<TensorT<S>>& grads) {
    ensure(store);
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& e = store.entry(i);
      if (!e.trainable) continue;
      auto& v = vel_[i];
      auto& g = grads[i].v;
      for (std::size_t k = 0; k < e.value.v.size(); ++k) {
        if (momentum_ == S(0)) {
          e.value.v[k] -= lr_ * g[k];
        } else {
          v[k] = momentum_ * v[k] + g[k];
          S upd = nesterov_ ? g[k] + momentum_ * v[k] : v[k];
          e.value.v[k] -= lr_ * upd;
        }
      }
    }
  }

 private:
  void ensure(const ParamStoreT<S>& store) {
    if (!vel_.empty()) return;
    vel_.resize(store.size());
    for (std::size_t i = 0; i < store.size(); ++i)
      vel_[i].assign(store.entry(i).value.size(), S(0));
  }

  S lr_, momentum_;
  bool nesterov_;
  std::vector<std::vector<S>> vel_;
};

template <class S>
class AdamT {
 public:
  AdamT(S lr, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStoreT<S>& store, const std::vector<TensorT<S>>& grads) {
    ensure(store);
    ++t_;
    S c1 = S(1) - std::pow(beta1_, S(t_));
    S c2 = S(1) - std::pow(beta2_, S(t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& e = store.entry(i);
      if (!e.trainable) continue;
      auto& g = grads[i].v;
      for (std::size_t k = 0; k < e.value.v.size(); ++k) {
        m_[i][k] = beta1_ * m_[i][k] + (S(1) - beta1_) * g[k];
        v_[i][k] = beta2_ * v_[i][k] + (S(1) - beta2_) * g[k] * g[k];
        e.value.v[k] -= lr_ * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
      }
    }
  }

 private:
  void ensure(const ParamStoreT<S>& store) {
    if (!m_.empty()) return;
    m_.resize(store.size());
    v_.resize(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
      m_[i].assign(store.entry(i).value.size(), S(0));
      v_[i].assign(store.entry(i).value.size(), S(0));
    }
  }

  S lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<std::vector<S>> m_, v_;
};

using Sgd = SgdT<float>;
using Adam = AdamT<float>;

}  // namespace sam
