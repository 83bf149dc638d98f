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

#include "ssmflow/ops.hpp"
#include "ssmflow/optim.hpp"

// Small parameter-holding layers. Layers are immutable during forward passes;
// construction draws from the caller's RNG so a fixed seed reproduces the
// exact parameter stream.

namespace ssmflow {

namespace detail {

template <typename T>
Tensor<T> glorot(Shape shape, index_t fan_in, index_t fan_out, Rng& rng) {
  const T limit = std::sqrt(T(6) / static_cast<T>(fan_in + fan_out));
  Tensor<T> t = Tensor<T>::uniform(std::move(shape), -limit, limit, rng);
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> zeros_param(Shape shape) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

}  // namespace detail

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]

  static Linear make(index_t in, index_t out, Rng& rng) {
    Linear l;
    l.weight = detail::glorot<T>({in, out}, in, out, rng);
    l.bias = detail::zeros_param<T>({out});
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return add(matmul(x, weight), bias); }

  void params(NamedParams<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNorm make(index_t dim) {
    LayerNorm n;
    n.gamma = Tensor<T>::filled({dim}, T(1));
    n.gamma.set_requires_grad(true);
    n.beta = detail::zeros_param<T>({dim});
    return n;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return layernorm(x, gamma, beta); }

  void params(NamedParams<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

template <typename T>
struct Conv2dLayer {
  Tensor<T> kernel;  // [kh x kw x cin x cout]
  Tensor<T> bias;    // [cout]
  index_t stride = 1;
  index_t padding = 0;

  static Conv2dLayer make(index_t kh, index_t kw, index_t cin, index_t cout, index_t stride,
                          index_t padding, Rng& rng) {
    Conv2dLayer c;
    c.kernel = detail::glorot<T>({kh, kw, cin, cout}, kh * kw * cin, kh * kw * cout, rng);
    c.bias = detail::zeros_param<T>({cout});
    c.stride = stride;
    c.padding = padding;
    return c;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, kernel, bias, stride, padding); }

  void params(NamedParams<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".kernel", kernel);
    out.emplace_back(prefix + ".bias", bias);
  }
};

/// Depthwise causal 1-D convolution layer over an L x D sequence.
template <typename T>
struct CausalConv1d {
  Tensor<T> kernel;  // [D x k]
  Tensor<T> bias;    // [D]

  static CausalConv1d make(index_t channels, index_t width, Rng& rng) {
    CausalConv1d c;
    c.kernel = detail::glorot<T>({channels, width}, width, width, rng);
    c.bias = detail::zeros_param<T>({channels});
    return c;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv1d_depthwise_causal(x, kernel, bias); }

  void params(NamedParams<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".kernel", kernel);
    out.emplace_back(prefix + ".bias", bias);
  }
};

/// Two-layer MLP with GELU, hidden size = ratio * dim.
template <typename T>
struct Mlp {
  Linear<T> fc1;
  Linear<T> fc2;

  static Mlp make(index_t dim, index_t ratio, Rng& rng) {
    Mlp m;
    m.fc1 = Linear<T>::make(dim, dim * ratio, rng);
    m.fc2 = Linear<T>::make(dim * ratio, dim, rng);
    return m;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return fc2(gelu(fc1(x))); }

  void params(NamedParams<T>& out, const std::string& prefix) {
    fc1.params(out, prefix + ".fc1");
    fc2.params(out, prefix + ".fc2");
  }
};

/// Sets a delta-projection bias so softplus(bias) is log-uniform in
/// [1e-3, 1e-1], the usual selective-SSM warm start.
template <typename T>
void init_delta_bias(Tensor<T>& bias, Rng& rng, index_t from = 0, index_t to = -1) {
  if (to < 0) to = bias.numel();
  for (index_t i = from; i < to; ++i) {
    const double t = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    bias.ptr()[i] = static_cast<T>(std::log(std::expm1(t)));
  }
}

}  // namespace ssmflow
