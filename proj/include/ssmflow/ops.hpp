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

#include "ssmflow/tensor.hpp"

// Differentiable primitives. Every op is a pure function of its inputs; when
// a tape is active and an input requires grad, a backward closure is recorded
// that accumulates into the inputs' gradient buffers. Broadcasting is limited
// to scalar-with-tensor and trailing-axis bias addition.

namespace ssmflow {

namespace detail {

template <typename T>
std::vector<T>* grad_sink(const std::shared_ptr<TensorData<T>>& d) {
  if (!d->requires_grad) return nullptr;
  if (d->grad.empty()) d->grad.assign(d->values.size(), T(0));
  return &d->grad;
}

// Returns nullptr when no gradient reached the op's output, in which case the
// whole node is a no-op.
template <typename T>
const std::vector<T>* grad_source(const std::shared_ptr<TensorData<T>>& d) {
  if (d->grad.empty()) return nullptr;
  return &d->grad;
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline std::vector<index_t> row_major_strides(const Shape& s) {
  std::vector<index_t> strides(s.size(), 1);
  for (index_t i = static_cast<index_t>(s.size()) - 2; i >= 0; --i) {
    strides[static_cast<std::size_t>(i)] =
        strides[static_cast<std::size_t>(i + 1)] * s[static_cast<std::size_t>(i + 1)];
  }
  return strides;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

/// fwd: T -> T. dfdx: (x, y) -> local derivative.
template <typename T, typename Fwd, typename Dfdx>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Dfdx dfdx) {
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xs = x.ptr();
  T* ys = y.ptr();
  const index_t n = x.numel();
  for (index_t i = 0; i < n; ++i) ys[i] = fwd(xs[i]);
  if (taping<T>() && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xd = x.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([xd, yd, dfdx] {
      const std::vector<T>* g = grad_source(yd);
      if (!g) return;
      std::vector<T>* gx = grad_sink(xd);
      if (!gx) return;
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*gx)[i] += (*g)[i] * dfdx(xd->values[i], yd->values[i]);
      }
    });
  }
  return y;
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T softplus_scalar(T x) {
  if (x > T(0)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// phi1(z) = (e^z - 1) / z, the zero-order-hold input factor. The series
// branch keeps the z -> 0 limit finite (phi1 -> 1).
template <typename T>
T phi1_scalar(T z) {
  if (std::abs(z) < T(1e-6)) return T(1) + z / T(2) + z * z / T(6);
  return std::expm1(z) / z;
}

template <typename T>
T phi1_deriv_scalar(T z) {
  if (std::abs(z) < T(1e-6)) return T(0.5) + z / T(3) + z * z / T(8);
  return ((z - T(1)) * std::exp(z) + T(1)) / (z * z);
}

}  // namespace detail

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return detail::sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v * detail::sigmoid_scalar(v); },
      [](T v, T) {
        T s = detail::sigmoid_scalar(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr double kInvSqrt2 = 0.7071067811865475244;
  constexpr double kInvSqrt2Pi = 0.3989422804014326779;
  return detail::unary_op(
      x, [](T v) { return T(0.5) * v * (T(1) + T(std::erf(double(v) * kInvSqrt2))); },
      [](T v, T) {
        T cdf = T(0.5) * (T(1) + T(std::erf(double(v) * kInvSqrt2)));
        T pdf = T(kInvSqrt2Pi * std::exp(-0.5 * double(v) * double(v)));
        return cdf + v * pdf;
      });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return detail::softplus_scalar(v); },
      [](T v, T) { return detail::sigmoid_scalar(v); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> phi1(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return detail::phi1_scalar(v); },
      [](T v, T) { return detail::phi1_deriv_scalar(v); });
}

/// Multiplication by a plain constant.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return detail::unary_op(
      x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

// ---------------------------------------------------------------------------
// Elementwise binary ops (same shape, scalar, or trailing-axis bias)
// ---------------------------------------------------------------------------

namespace detail {

enum class BroadcastKind { Same, ScalarRhs, TrailingBias };

template <typename T>
BroadcastKind classify_broadcast(const Tensor<T>& a, const Tensor<T>& b, const char* op,
                                 bool allow_bias) {
  if (a.shape() == b.shape()) return BroadcastKind::Same;
  if (b.numel() == 1) return BroadcastKind::ScalarRhs;
  if (allow_bias && b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.extent(0)) {
    return BroadcastKind::TrailingBias;
  }
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()) + " are not compatible");
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  auto kind = detail::classify_broadcast(a, b, "add", true);
  Tensor<T> y = Tensor<T>::zeros(a.shape());
  const T* as = a.ptr();
  const T* bs = b.ptr();
  T* ys = y.ptr();
  const index_t n = a.numel();
  const index_t c = (kind == detail::BroadcastKind::TrailingBias) ? b.numel() : 0;
  switch (kind) {
    case detail::BroadcastKind::Same:
      for (index_t i = 0; i < n; ++i) ys[i] = as[i] + bs[i];
      break;
    case detail::BroadcastKind::ScalarRhs:
      for (index_t i = 0; i < n; ++i) ys[i] = as[i] + bs[0];
      break;
    case detail::BroadcastKind::TrailingBias:
      for (index_t i = 0; i < n; ++i) ys[i] = as[i] + bs[i % c];
      break;
  }
  if (detail::taping<T>() && detail::any_requires_grad(a, b)) {
    y.set_requires_grad(true);
    auto ad = a.impl();
    auto bd = b.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([ad, bd, yd, kind, c] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      if (auto* ga = detail::grad_sink(ad)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*ga)[i] += (*g)[i];
      }
      if (auto* gb = detail::grad_sink(bd)) {
        switch (kind) {
          case detail::BroadcastKind::Same:
            for (std::size_t i = 0; i < g->size(); ++i) (*gb)[i] += (*g)[i];
            break;
          case detail::BroadcastKind::ScalarRhs:
            for (std::size_t i = 0; i < g->size(); ++i) (*gb)[0] += (*g)[i];
            break;
          case detail::BroadcastKind::TrailingBias:
            for (std::size_t i = 0; i < g->size(); ++i) {
              (*gb)[i % static_cast<std::size_t>(c)] += (*g)[i];
            }
            break;
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  auto kind = detail::classify_broadcast(a, b, "sub", true);
  Tensor<T> y = Tensor<T>::zeros(a.shape());
  const T* as = a.ptr();
  const T* bs = b.ptr();
  T* ys = y.ptr();
  const index_t n = a.numel();
  const index_t c = (kind == detail::BroadcastKind::TrailingBias) ? b.numel() : 0;
  switch (kind) {
    case detail::BroadcastKind::Same:
      for (index_t i = 0; i < n; ++i) ys[i] = as[i] - bs[i];
      break;
    case detail::BroadcastKind::ScalarRhs:
      for (index_t i = 0; i < n; ++i) ys[i] = as[i] - bs[0];
      break;
    case detail::BroadcastKind::TrailingBias:
      for (index_t i = 0; i < n; ++i) ys[i] = as[i] - bs[i % c];
      break;
  }
  if (detail::taping<T>() && detail::any_requires_grad(a, b)) {
    y.set_requires_grad(true);
    auto ad = a.impl();
    auto bd = b.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([ad, bd, yd, kind, c] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      if (auto* ga = detail::grad_sink(ad)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*ga)[i] += (*g)[i];
      }
      if (auto* gb = detail::grad_sink(bd)) {
        switch (kind) {
          case detail::BroadcastKind::Same:
            for (std::size_t i = 0; i < g->size(); ++i) (*gb)[i] -= (*g)[i];
            break;
          case detail::BroadcastKind::ScalarRhs:
            for (std::size_t i = 0; i < g->size(); ++i) (*gb)[0] -= (*g)[i];
            break;
          case detail::BroadcastKind::TrailingBias:
            for (std::size_t i = 0; i < g->size(); ++i) {
              (*gb)[i % static_cast<std::size_t>(c)] -= (*g)[i];
            }
            break;
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  auto kind = detail::classify_broadcast(a, b, "mul", false);
  Tensor<T> y = Tensor<T>::zeros(a.shape());
  const T* as = a.ptr();
  const T* bs = b.ptr();
  T* ys = y.ptr();
  const index_t n = a.numel();
  if (kind == detail::BroadcastKind::Same) {
    for (index_t i = 0; i < n; ++i) ys[i] = as[i] * bs[i];
  } else {
    for (index_t i = 0; i < n; ++i) ys[i] = as[i] * bs[0];
  }
  if (detail::taping<T>() && detail::any_requires_grad(a, b)) {
    y.set_requires_grad(true);
    auto ad = a.impl();
    auto bd = b.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([ad, bd, yd, kind] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      if (auto* ga = detail::grad_sink(ad)) {
        if (kind == detail::BroadcastKind::Same) {
          for (std::size_t i = 0; i < g->size(); ++i) (*ga)[i] += (*g)[i] * bd->values[i];
        } else {
          for (std::size_t i = 0; i < g->size(); ++i) (*ga)[i] += (*g)[i] * bd->values[0];
        }
      }
      if (auto* gb = detail::grad_sink(bd)) {
        if (kind == detail::BroadcastKind::Same) {
          for (std::size_t i = 0; i < g->size(); ++i) (*gb)[i] += (*g)[i] * ad->values[i];
        } else {
          for (std::size_t i = 0; i < g->size(); ++i) (*gb)[0] += (*g)[i] * ad->values[i];
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void gemm_nn(const T* a, const T* b, T* y, index_t m, index_t k, index_t n) {
  parallel_for(m, 16, [&](index_t lo, index_t hi) {
    for (index_t i = lo; i < hi; ++i) {
      T* yrow = y + i * n;
      for (index_t p = 0; p < k; ++p) {
        const T av = a[i * k + p];
        if (av == T(0)) continue;
        const T* brow = b + p * n;
        for (index_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
      }
    }
  });
}

// y[m x n] += a[m x k] * b[n x k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* y, index_t m, index_t k, index_t n) {
  parallel_for(m, 16, [&](index_t lo, index_t hi) {
    for (index_t i = lo; i < hi; ++i) {
      const T* arow = a + i * k;
      T* yrow = y + i * n;
      for (index_t j = 0; j < n; ++j) {
        const T* brow = b + j * k;
        T acc = T(0);
        for (index_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        yrow[j] += acc;
      }
    }
  });
}

// y[k x n] += a[m x k]^T * b[m x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* y, index_t m, index_t k, index_t n) {
  for (index_t p = 0; p < m; ++p) {
    const T* arow = a + p * k;
    const T* brow = b + p * n;
    for (index_t i = 0; i < k; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* yrow = y + i * n;
      for (index_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

/// Standard matrix product a[m x k] * b[k x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const index_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<T> y = Tensor<T>::zeros({m, n});
  detail::gemm_nn(a.ptr(), b.ptr(), y.ptr(), m, k, n);
  if (detail::taping<T>() && detail::any_requires_grad(a, b)) {
    y.set_requires_grad(true);
    auto ad = a.impl();
    auto bd = b.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([ad, bd, yd, m, k, n] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      if (auto* ga = detail::grad_sink(ad)) {
        detail::gemm_nt(g->data(), bd->values.data(), ga->data(), m, n, k);
      }
      if (auto* gb = detail::grad_sink(bd)) {
        detail::gemm_tn(ad->values.data(), g->data(), gb->data(), m, k, n);
      }
    });
  }
  return y;
}

/// a[m x k] * b[n x k]^T, the pairwise-similarity form.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(1)) {
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const index_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
  Tensor<T> y = Tensor<T>::zeros({m, n});
  detail::gemm_nt(a.ptr(), b.ptr(), y.ptr(), m, k, n);
  if (detail::taping<T>() && detail::any_requires_grad(a, b)) {
    y.set_requires_grad(true);
    auto ad = a.impl();
    auto bd = b.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([ad, bd, yd, m, k, n] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      // ga[m x k] += g[m x n] * b[n x k]
      if (auto* ga = detail::grad_sink(ad)) {
        detail::gemm_nn(g->data(), bd->values.data(), ga->data(), m, n, k);
      }
      // gb[n x k] += g[m x n]^T * a[m x k]
      if (auto* gb = detail::grad_sink(bd)) {
        detail::gemm_tn(g->data(), ad->values.data(), gb->data(), m, n, k);
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Softmax over an arbitrary set of axes (jointly normalized)
// ---------------------------------------------------------------------------

namespace detail {

struct AxisGroup {
  std::vector<index_t> group_offsets;  // offsets of the normalized group
  std::vector<index_t> base_offsets;   // offsets of the complement dims
};

inline AxisGroup build_axis_group(const Shape& shape, std::vector<index_t> axes) {
  const index_t rank = static_cast<index_t>(shape.size());
  if (axes.empty()) throw ValueError("softmax: empty axis set");
  std::vector<bool> in_group(static_cast<std::size_t>(rank), false);
  for (index_t a : axes) {
    if (a < 0 || a >= rank) {
      throw ValueError("softmax: axis " + std::to_string(a) + " out of range for " + shape_str(shape));
    }
    if (in_group[static_cast<std::size_t>(a)]) {
      throw ValueError("softmax: duplicate axis " + std::to_string(a));
    }
    in_group[static_cast<std::size_t>(a)] = true;
  }
  auto strides = row_major_strides(shape);
  AxisGroup out;
  out.group_offsets.assign(1, 0);
  out.base_offsets.assign(1, 0);
  for (index_t d = 0; d < rank; ++d) {
    auto& target = in_group[static_cast<std::size_t>(d)] ? out.group_offsets : out.base_offsets;
    std::vector<index_t> next;
    next.reserve(target.size() * static_cast<std::size_t>(shape[static_cast<std::size_t>(d)]));
    for (index_t base : target) {
      for (index_t i = 0; i < shape[static_cast<std::size_t>(d)]; ++i) {
        next.push_back(base + i * strides[static_cast<std::size_t>(d)]);
      }
    }
    target = std::move(next);
  }
  return out;
}

}  // namespace detail

/// Numerically stabilized softmax jointly over the listed axes; every group
/// sums to one.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, const std::vector<index_t>& axes) {
  detail::AxisGroup grouping = detail::build_axis_group(x.shape(), axes);
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xs = x.ptr();
  T* ys = y.ptr();
  const auto& off = grouping.group_offsets;
  const auto& bases = grouping.base_offsets;
  parallel_for(static_cast<index_t>(bases.size()), 64, [&](index_t lo, index_t hi) {
    for (index_t b = lo; b < hi; ++b) {
      const index_t base = bases[static_cast<std::size_t>(b)];
      T mx = xs[base + off[0]];
      for (index_t o : off) mx = std::max(mx, xs[base + o]);
      T sum = T(0);
      for (index_t o : off) {
        T e = std::exp(xs[base + o] - mx);
        ys[base + o] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (index_t o : off) ys[base + o] *= inv;
    }
  });
  if (detail::taping<T>() && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xd = x.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([xd, yd, grouping] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      std::vector<T>* gx = detail::grad_sink(xd);
      if (!gx) return;
      for (index_t base : grouping.base_offsets) {
        T dot = T(0);
        for (index_t o : grouping.group_offsets) {
          dot += (*g)[static_cast<std::size_t>(base + o)] * yd->values[static_cast<std::size_t>(base + o)];
        }
        for (index_t o : grouping.group_offsets) {
          const std::size_t i = static_cast<std::size_t>(base + o);
          (*gx)[i] += yd->values[i] * ((*g)[i] - dot);
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  Tensor<T> y = Tensor<T>::scalar(acc);
  if (detail::taping<T>() && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xd = x.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([xd, yd] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      if (auto* gx = detail::grad_sink(xd)) {
        for (auto& v : *gx) v += (*g)[0];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> y = Tensor<T>::from(std::move(shape), x.data());
  if (detail::taping<T>() && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xd = x.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([xd, yd] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      if (auto* gx = detail::grad_sink(xd)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*gx)[i] += (*g)[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> reverse(const Tensor<T>& x, index_t axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw ValueError("reverse: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  }
  const auto strides = detail::row_major_strides(x.shape());
  const index_t extent = x.extent(axis);
  const index_t stride = strides[static_cast<std::size_t>(axis)];
  const index_t block = extent * stride;
  const index_t n = x.numel();
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xs = x.ptr();
  T* ys = y.ptr();
  for (index_t i = 0; i < n; ++i) {
    const index_t pos = (i % block) / stride;
    const index_t j = i + (extent - 1 - 2 * pos) * stride;
    ys[j] = xs[i];
  }
  if (detail::taping<T>() && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xd = x.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([xd, yd, extent, stride, block, n] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      if (auto* gx = detail::grad_sink(xd)) {
        for (index_t i = 0; i < n; ++i) {
          const index_t pos = (i % block) / stride;
          const index_t j = i + (extent - 1 - 2 * pos) * stride;
          (*gx)[static_cast<std::size_t>(i)] += (*g)[static_cast<std::size_t>(j)];
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> concat_last(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ValueError("concat_last: no inputs");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  index_t total = 0;
  for (const auto& p : parts) {
    Shape plead(p.shape().begin(), p.shape().end() - 1);
    if (plead != lead) {
      throw ShapeError("concat_last: leading dims differ, " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    total += p.shape().back();
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor<T> y = Tensor<T>::zeros(out_shape);
  const index_t rows = numel_of(lead);
  index_t col = 0;
  for (const auto& p : parts) {
    const index_t c = p.shape().back();
    const T* ps = p.ptr();
    T* ys = y.ptr();
    for (index_t r = 0; r < rows; ++r) {
      for (index_t j = 0; j < c; ++j) ys[r * total + col + j] = ps[r * c + j];
    }
    col += c;
  }
  bool needs = false;
  for (const auto& p : parts) needs = needs || p.requires_grad();
  if (detail::taping<T>() && needs) {
    y.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData<T>>> pins;
    pins.reserve(parts.size());
    for (const auto& p : parts) pins.push_back(p.impl());
    auto yd = y.impl();
    GradTape<T>::active()->record([pins, yd, rows, total] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      index_t col = 0;
      for (const auto& pd : pins) {
        const index_t c = pd->shape.back();
        if (auto* gp = detail::grad_sink(pd)) {
          for (index_t r = 0; r < rows; ++r) {
            for (index_t j = 0; j < c; ++j) {
              (*gp)[static_cast<std::size_t>(r * c + j)] +=
                  (*g)[static_cast<std::size_t>(r * total + col + j)];
            }
          }
        }
        col += c;
      }
    });
  }
  return y;
}

/// Slice [from, to) of the last axis.
template <typename T>
Tensor<T> slice_last(const Tensor<T>& x, index_t from, index_t to) {
  const index_t c = x.shape().back();
  if (from < 0 || to > c || from >= to) {
    throw ValueError("slice_last: range [" + std::to_string(from) + ", " + std::to_string(to) +
                     ") invalid for extent " + std::to_string(c));
  }
  Shape out_shape = x.shape();
  out_shape.back() = to - from;
  Tensor<T> y = Tensor<T>::zeros(out_shape);
  const index_t rows = x.numel() / c;
  const index_t w = to - from;
  const T* xs = x.ptr();
  T* ys = y.ptr();
  for (index_t r = 0; r < rows; ++r) {
    for (index_t j = 0; j < w; ++j) ys[r * w + j] = xs[r * c + from + j];
  }
  if (detail::taping<T>() && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xd = x.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([xd, yd, rows, c, w, from] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      if (auto* gx = detail::grad_sink(xd)) {
        for (index_t r = 0; r < rows; ++r) {
          for (index_t j = 0; j < w; ++j) {
            (*gx)[static_cast<std::size_t>(r * c + from + j)] += (*g)[static_cast<std::size_t>(r * w + j)];
          }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

/// Depthwise causal 1-D convolution. out[t, d] depends only on x[t-k+1..t, d]
/// (left zero padding); kernel tap j reaches back (k-1-j) steps so tap k-1 is
/// the current position.
template <typename T>
Tensor<T> conv1d_depthwise_causal(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  if (x.rank() != 2 || kernel.rank() != 2 || x.extent(1) != kernel.extent(0)) {
    throw ShapeError("conv1d_depthwise_causal: x " + shape_str(x.shape()) + " vs kernel " +
                     shape_str(kernel.shape()));
  }
  if (bias.rank() != 1 || bias.extent(0) != x.extent(1)) {
    throw ShapeError("conv1d_depthwise_causal: bias " + shape_str(bias.shape()) + " vs channels " +
                     std::to_string(x.extent(1)));
  }
  const index_t L = x.extent(0), D = x.extent(1), k = kernel.extent(1);
  Tensor<T> y = Tensor<T>::zeros({L, D});
  const T* xs = x.ptr();
  const T* ks = kernel.ptr();
  const T* bs = bias.ptr();
  T* ys = y.ptr();
  for (index_t t = 0; t < L; ++t) {
    for (index_t d = 0; d < D; ++d) {
      T acc = bs[d];
      for (index_t j = 0; j < k; ++j) {
        const index_t src = t - (k - 1) + j;
        if (src >= 0) acc += xs[src * D + d] * ks[d * k + j];
      }
      ys[t * D + d] = acc;
    }
  }
  if (detail::taping<T>() && detail::any_requires_grad(x, kernel, bias)) {
    y.set_requires_grad(true);
    auto xd = x.impl();
    auto kd = kernel.impl();
    auto bd = bias.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([xd, kd, bd, yd, L, D, k] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      std::vector<T>* gx = detail::grad_sink(xd);
      std::vector<T>* gk = detail::grad_sink(kd);
      std::vector<T>* gb = detail::grad_sink(bd);
      for (index_t t = 0; t < L; ++t) {
        for (index_t d = 0; d < D; ++d) {
          const T gv = (*g)[static_cast<std::size_t>(t * D + d)];
          if (gb) (*gb)[static_cast<std::size_t>(d)] += gv;
          for (index_t j = 0; j < k; ++j) {
            const index_t src = t - (k - 1) + j;
            if (src < 0) continue;
            if (gx) (*gx)[static_cast<std::size_t>(src * D + d)] += gv * kd->values[static_cast<std::size_t>(d * k + j)];
            if (gk) (*gk)[static_cast<std::size_t>(d * k + j)] += gv * xd->values[static_cast<std::size_t>(src * D + d)];
          }
        }
      }
    });
  }
  return y;
}

/// 2-D convolution (cross-correlation) on H x W x Cin with a
/// kh x kw x Cin x Cout kernel, zero padding and a per-output-channel bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, index_t stride,
                 index_t padding) {
  if (x.rank() != 3 || kernel.rank() != 4 || kernel.extent(2) != x.extent(2)) {
    throw ShapeError("conv2d: x " + shape_str(x.shape()) + " vs kernel " + shape_str(kernel.shape()));
  }
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
  const index_t H = x.extent(0), W = x.extent(1), Cin = x.extent(2);
  const index_t kh = kernel.extent(0), kw = kernel.extent(1), Cout = kernel.extent(3);
  if (bias.rank() != 1 || bias.extent(0) != Cout) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " vs output channels " +
                     std::to_string(Cout));
  }
  const index_t Ho = (H + 2 * padding - kh) / stride + 1;
  const index_t Wo = (W + 2 * padding - kw) / stride + 1;
  if (H + 2 * padding < kh || W + 2 * padding < kw || Ho < 1 || Wo < 1) {
    throw ShapeError("conv2d: non-positive output extent for input " + shape_str(x.shape()) +
                     ", kernel " + shape_str(kernel.shape()) + ", stride " + std::to_string(stride) +
                     ", padding " + std::to_string(padding));
  }
  Tensor<T> y = Tensor<T>::zeros({Ho, Wo, Cout});
  const T* xs = x.ptr();
  const T* ks = kernel.ptr();
  const T* bs = bias.ptr();
  T* ys = y.ptr();
  parallel_for(Ho, 4, [&](index_t lo, index_t hi) {
    for (index_t oy = lo; oy < hi; ++oy) {
      for (index_t ox = 0; ox < Wo; ++ox) {
        T* out = ys + (oy * Wo + ox) * Cout;
        for (index_t co = 0; co < Cout; ++co) out[co] = bs[co];
        for (index_t ky = 0; ky < kh; ++ky) {
          const index_t iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= H) continue;
          for (index_t kx = 0; kx < kw; ++kx) {
            const index_t ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= W) continue;
            const T* xin = xs + (iy * W + ix) * Cin;
            const T* krow = ks + ((ky * kw + kx) * Cin) * Cout;
            for (index_t ci = 0; ci < Cin; ++ci) {
              const T xv = xin[ci];
              if (xv == T(0)) continue;
              const T* kk = krow + ci * Cout;
              for (index_t co = 0; co < Cout; ++co) out[co] += xv * kk[co];
            }
          }
        }
      }
    }
  });
  if (detail::taping<T>() && detail::any_requires_grad(x, kernel, bias)) {
    y.set_requires_grad(true);
    auto xd = x.impl();
    auto kd = kernel.impl();
    auto bd = bias.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([xd, kd, bd, yd, H, W, Cin, kh, kw, Cout, Ho, Wo, stride, padding] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      std::vector<T>* gx = detail::grad_sink(xd);
      std::vector<T>* gk = detail::grad_sink(kd);
      std::vector<T>* gb = detail::grad_sink(bd);
      for (index_t oy = 0; oy < Ho; ++oy) {
        for (index_t ox = 0; ox < Wo; ++ox) {
          const T* gout = g->data() + (oy * Wo + ox) * Cout;
          if (gb) {
            for (index_t co = 0; co < Cout; ++co) (*gb)[static_cast<std::size_t>(co)] += gout[co];
          }
          for (index_t ky = 0; ky < kh; ++ky) {
            const index_t iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= H) continue;
            for (index_t kx = 0; kx < kw; ++kx) {
              const index_t ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= W) continue;
              const index_t xoff = (iy * W + ix) * Cin;
              const index_t koff = (ky * kw + kx) * Cin * Cout;
              for (index_t ci = 0; ci < Cin; ++ci) {
                const T xv = xd->values[static_cast<std::size_t>(xoff + ci)];
                const T* kk = kd->values.data() + koff + ci * Cout;
                T gxv = T(0);
                for (index_t co = 0; co < Cout; ++co) {
                  const T gv = gout[co];
                  gxv += gv * kk[co];
                  if (gk) (*gk)[static_cast<std::size_t>(koff + ci * Cout + co)] += gv * xv;
                }
                if (gx) (*gx)[static_cast<std::size_t>(xoff + ci)] += gxv;
              }
            }
          }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Layer normalization over the trailing axis
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps = T(1e-5)) {
  const index_t C = x.shape().back();
  if (gamma.rank() != 1 || gamma.extent(0) != C || beta.rank() != 1 || beta.extent(0) != C) {
    throw ShapeError("layernorm: gamma " + shape_str(gamma.shape()) + " / beta " +
                     shape_str(beta.shape()) + " vs channels " + std::to_string(C));
  }
  const index_t rows = x.numel() / C;
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(rows));
  std::vector<T> mean(static_cast<std::size_t>(rows));
  const T* xs = x.ptr();
  const T* gs = gamma.ptr();
  const T* bs = beta.ptr();
  T* ys = y.ptr();
  for (index_t r = 0; r < rows; ++r) {
    const T* row = xs + r * C;
    T mu = T(0);
    for (index_t c = 0; c < C; ++c) mu += row[c];
    mu /= static_cast<T>(C);
    T var = T(0);
    for (index_t c = 0; c < C; ++c) {
      const T d = row[c] - mu;
      var += d * d;
    }
    var /= static_cast<T>(C);
    const T inv = T(1) / std::sqrt(var + eps);
    mean[static_cast<std::size_t>(r)] = mu;
    inv_std[static_cast<std::size_t>(r)] = inv;
    for (index_t c = 0; c < C; ++c) ys[r * C + c] = gs[c] * (row[c] - mu) * inv + bs[c];
  }
  if (detail::taping<T>() && detail::any_requires_grad(x, gamma, beta)) {
    y.set_requires_grad(true);
    auto xd = x.impl();
    auto gd = gamma.impl();
    auto bd = beta.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([xd, gd, bd, yd, rows, C, mean, inv_std] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      std::vector<T>* gx = detail::grad_sink(xd);
      std::vector<T>* gg = detail::grad_sink(gd);
      std::vector<T>* gb = detail::grad_sink(bd);
      for (index_t r = 0; r < rows; ++r) {
        const T* row = xd->values.data() + r * C;
        const T* grow = g->data() + r * C;
        const T mu = mean[static_cast<std::size_t>(r)];
        const T inv = inv_std[static_cast<std::size_t>(r)];
        T sum_dxhat = T(0);
        T sum_dxhat_xhat = T(0);
        for (index_t c = 0; c < C; ++c) {
          const T xhat = (row[c] - mu) * inv;
          const T dxhat = grow[c] * gd->values[static_cast<std::size_t>(c)];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          if (gg) (*gg)[static_cast<std::size_t>(c)] += grow[c] * xhat;
          if (gb) (*gb)[static_cast<std::size_t>(c)] += grow[c];
        }
        if (gx) {
          const T n = static_cast<T>(C);
          for (index_t c = 0; c < C; ++c) {
            const T xhat = (row[c] - mu) * inv;
            const T dxhat = grow[c] * gd->values[static_cast<std::size_t>(c)];
            (*gx)[static_cast<std::size_t>(r * C + c)] +=
                inv * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
          }
        }
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Spatial broadcast multiply: x[..., C] scaled by a per-position weight map
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& w) {
  if (w.rank() != x.rank() - 1 ||
      !std::equal(w.shape().begin(), w.shape().end(), x.shape().begin())) {
    throw ShapeError("scale_channels: weight " + shape_str(w.shape()) + " vs x " + shape_str(x.shape()));
  }
  const index_t C = x.shape().back();
  const index_t rows = x.numel() / C;
  Tensor<T> y = Tensor<T>::zeros(x.shape());
  const T* xs = x.ptr();
  const T* ws = w.ptr();
  T* ys = y.ptr();
  for (index_t r = 0; r < rows; ++r) {
    const T wv = ws[r];
    for (index_t c = 0; c < C; ++c) ys[r * C + c] = xs[r * C + c] * wv;
  }
  if (detail::taping<T>() && detail::any_requires_grad(x, w)) {
    y.set_requires_grad(true);
    auto xd = x.impl();
    auto wd = w.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([xd, wd, yd, rows, C] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      std::vector<T>* gx = detail::grad_sink(xd);
      std::vector<T>* gw = detail::grad_sink(wd);
      for (index_t r = 0; r < rows; ++r) {
        const T wv = wd->values[static_cast<std::size_t>(r)];
        T acc = T(0);
        for (index_t c = 0; c < C; ++c) {
          const std::size_t i = static_cast<std::size_t>(r * C + c);
          if (gx) (*gx)[i] += (*g)[i] * wv;
          acc += (*g)[i] * xd->values[i];
        }
        if (gw) (*gw)[static_cast<std::size_t>(r)] += acc;
      }
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// Bilinear resize (edge clamp), differentiable w.r.t. the input map
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, index_t Ho, index_t Wo) {
  if (x.rank() != 3) throw ShapeError("bilinear_resize: expected H x W x C, got " + shape_str(x.shape()));
  if (Ho < 1 || Wo < 1) throw ValueError("bilinear_resize: non-positive output size");
  const index_t H = x.extent(0), W = x.extent(1), C = x.extent(2);
  Tensor<T> y = Tensor<T>::zeros({Ho, Wo, C});
  const T* xs = x.ptr();
  T* ys = y.ptr();

  struct Taps {
    index_t lo, hi;
    T w_hi;
  };
  auto make_taps = [](index_t in, index_t out, index_t o) {
    T pos = (static_cast<T>(o) + T(0.5)) * static_cast<T>(in) / static_cast<T>(out) - T(0.5);
    if (pos < T(0)) pos = T(0);
    if (pos > static_cast<T>(in - 1)) pos = static_cast<T>(in - 1);
    index_t lo = static_cast<index_t>(std::floor(pos));
    index_t hi = std::min(lo + 1, in - 1);
    return Taps{lo, hi, pos - static_cast<T>(lo)};
  };

  std::vector<Taps> ty(static_cast<std::size_t>(Ho)), tx(static_cast<std::size_t>(Wo));
  for (index_t o = 0; o < Ho; ++o) ty[static_cast<std::size_t>(o)] = make_taps(H, Ho, o);
  for (index_t o = 0; o < Wo; ++o) tx[static_cast<std::size_t>(o)] = make_taps(W, Wo, o);

  for (index_t oy = 0; oy < Ho; ++oy) {
    const Taps& a = ty[static_cast<std::size_t>(oy)];
    for (index_t ox = 0; ox < Wo; ++ox) {
      const Taps& b = tx[static_cast<std::size_t>(ox)];
      const T w00 = (T(1) - a.w_hi) * (T(1) - b.w_hi);
      const T w01 = (T(1) - a.w_hi) * b.w_hi;
      const T w10 = a.w_hi * (T(1) - b.w_hi);
      const T w11 = a.w_hi * b.w_hi;
      T* out = ys + (oy * Wo + ox) * C;
      const T* p00 = xs + (a.lo * W + b.lo) * C;
      const T* p01 = xs + (a.lo * W + b.hi) * C;
      const T* p10 = xs + (a.hi * W + b.lo) * C;
      const T* p11 = xs + (a.hi * W + b.hi) * C;
      for (index_t c = 0; c < C; ++c) {
        out[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
    }
  }
  if (detail::taping<T>() && x.requires_grad()) {
    y.set_requires_grad(true);
    auto xd = x.impl();
    auto yd = y.impl();
    GradTape<T>::active()->record([xd, yd, ty, tx, Ho, Wo, W, C] {
      const std::vector<T>* g = detail::grad_source(yd);
      if (!g) return;
      std::vector<T>* gx = detail::grad_sink(xd);
      if (!gx) return;
      for (index_t oy = 0; oy < Ho; ++oy) {
        const Taps& a = ty[static_cast<std::size_t>(oy)];
        for (index_t ox = 0; ox < Wo; ++ox) {
          const Taps& b = tx[static_cast<std::size_t>(ox)];
          const T w00 = (T(1) - a.w_hi) * (T(1) - b.w_hi);
          const T w01 = (T(1) - a.w_hi) * b.w_hi;
          const T w10 = a.w_hi * (T(1) - b.w_hi);
          const T w11 = a.w_hi * b.w_hi;
          const T* gout = g->data() + (oy * Wo + ox) * C;
          for (index_t c = 0; c < C; ++c) {
            (*gx)[static_cast<std::size_t>((a.lo * W + b.lo) * C + c)] += w00 * gout[c];
            (*gx)[static_cast<std::size_t>((a.lo * W + b.hi) * C + c)] += w01 * gout[c];
            (*gx)[static_cast<std::size_t>((a.hi * W + b.lo) * C + c)] += w10 * gout[c];
            (*gx)[static_cast<std::size_t>((a.hi * W + b.hi) * C + c)] += w11 * gout[c];
          }
        }
      }
    });
  }
  return y;
}

}  // namespace ssmflow
