// Copyright 2026 the ssmflow authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ssmflow/tensor.hpp"

namespace ssmflow {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

/// Thrown when a step sees a non-finite gradient; the step is rejected and
/// parameters are left untouched.
class NonFiniteGradientError : public ValueError {
 public:
  using ValueError::ValueError;
};

/// AdamW with decoupled weight decay: the decay shrinks the parameter
/// directly and never enters the moment estimates.
template <typename T>
class AdamW {
 public:
  AdamW(T lr = T(1e-3), T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8),
        T weight_decay = T(0))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  T learning_rate() const { return lr_; }
  void set_learning_rate(T lr) { lr_ = lr; }

  /// Applies one update to every parameter that has a gradient, then clears
  /// the gradients. Parameters are matched to moment state by position, so
  /// the list must be stable across calls.
  void step(NamedParams<T>& params) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(static_cast<std::size_t>(params[i].second.numel()), T(0));
        v_[i].assign(static_cast<std::size_t>(params[i].second.numel()), T(0));
      }
    }
    for (auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      for (T g : p.grad()) {
        if (!std::isfinite(g)) {
          throw NonFiniteGradientError("adamw_step: non-finite gradient in parameter '" + name + "'");
        }
      }
    }
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = params[i].second;
      std::vector<T>& m = m_[i];
      std::vector<T>& v = v_[i];
      const bool has_grad = p.has_grad();
      const std::vector<T> zero;
      const std::vector<T>& g = has_grad ? p.grad() : zero;
      T* pv = p.ptr();
      for (std::size_t j = 0; j < m.size(); ++j) {
        const T gj = has_grad ? g[j] : T(0);
        if (weight_decay_ != T(0)) pv[j] -= lr_ * weight_decay_ * pv[j];
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * gj;
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * gj * gj;
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        pv[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
      p.zero_grad();
    }
  }

 private:
  T lr_, beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

}  // namespace ssmflow
