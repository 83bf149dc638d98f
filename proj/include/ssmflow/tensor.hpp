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

#include <algorithm>
#include <cassert>
#include <initializer_list>
#include <memory>
#include <utility>

#include "ssmflow/common.hpp"

namespace ssmflow {

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> values;  // contiguous, row-major (last index fastest)
  std::vector<T> grad;    // empty until the backward pass touches it
  bool requires_grad = false;
};

/// Dense row-major tensor with shared storage. Copies are shallow; the value
/// buffer is treated as immutable once it participates in a taped forward
/// pass (optimizer steps mutate parameters between passes).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape) { return filled(std::move(shape), T(0)); }

  static Tensor filled(Shape shape, T value) {
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    t.d_->shape = std::move(shape);
    for (index_t e : t.d_->shape) {
      if (e < 1) throw ShapeError("tensor extent must be >= 1, got shape " + shape_str(t.d_->shape));
    }
    t.d_->values.assign(static_cast<std::size_t>(numel_of(t.d_->shape)), value);
    return t;
  }

  static Tensor scalar(T value) { return filled(Shape{}, value); }

  static Tensor from(Shape shape, std::vector<T> values) {
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    t.d_->shape = std::move(shape);
    if (numel_of(t.d_->shape) != static_cast<index_t>(values.size())) {
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(t.d_->shape));
    }
    t.d_->values = std::move(values);
    return t;
  }

  static Tensor uniform(Shape shape, T lo, T hi, Rng& rng) {
    Tensor t = zeros(std::move(shape));
    for (T& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor normal(Shape shape, T mean, T stddev, Rng& rng) {
    Tensor t = zeros(std::move(shape));
    for (T& v : t.data()) v = static_cast<T>(rng.normal(mean, stddev));
    return t;
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  index_t rank() const { return static_cast<index_t>(d_->shape.size()); }
  index_t extent(index_t axis) const { return d_->shape[static_cast<std::size_t>(axis)]; }
  index_t numel() const { return static_cast<index_t>(d_->values.size()); }

  std::vector<T>& data() { return d_->values; }
  const std::vector<T>& data() const { return d_->values; }
  T* ptr() { return d_->values.data(); }
  const T* ptr() const { return d_->values.data(); }

  T item() const {
    if (numel() != 1) throw ValueError("item() requires a single-element tensor, got " + shape_str(shape()));
    return d_->values[0];
  }

  T& at(std::initializer_list<index_t> idx) { return d_->values[static_cast<std::size_t>(offset(idx))]; }
  T at(std::initializer_list<index_t> idx) const { return d_->values[static_cast<std::size_t>(offset(idx))]; }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    d_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return defined() && !d_->grad.empty(); }

  /// Gradient buffer, zero-initialized on first access.
  std::vector<T>& grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), T(0));
    return d_->grad;
  }

  void zero_grad() { d_->grad.clear(); }

  /// Deep copy of values (fresh storage, no grad, same requires_grad flag).
  Tensor clone() const {
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    t.d_->shape = d_->shape;
    t.d_->values = d_->values;
    t.d_->requires_grad = d_->requires_grad;
    return t;
  }

  /// Same storage under a different dtype is not supported; this converts.
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(d_->values.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(d_->values[i]);
    return Tensor<U>::from(d_->shape, std::move(out));
  }

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

  std::shared_ptr<TensorData<T>> impl() const { return d_; }

 private:
  index_t offset(std::initializer_list<index_t> idx) const {
    assert(static_cast<index_t>(idx.size()) == rank());
    index_t off = 0;
    std::size_t k = 0;
    for (index_t i : idx) {
      off = off * d_->shape[k] + i;
      ++k;
    }
    return off;
  }

  std::shared_ptr<TensorData<T>> d_;
};

/// Dynamic reverse-mode tape. Constructing a tape makes it the active
/// recorder on this thread; destruction restores the previous one. Primitive
/// ops append backward closures in forward order; backward() replays them in
/// reverse, accumulating gradients into each participating tensor's buffer.
template <typename T>
class GradTape {
 public:
  GradTape() : prev_(current()) { current() = this; }
  ~GradTape() { current() = prev_; }

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* active() { return current(); }

  void record(std::function<void()> node) { nodes_.push_back(std::move(node)); }

  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape. The loss must be a
  /// rank-0 (single element) tensor recorded on this tape.
  void backward(Tensor<T> loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ValueError("backward() requires a scalar loss, got " +
                       (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  static GradTape*& current() {
    thread_local GradTape* cur = nullptr;
    return cur;
  }

  std::vector<std::function<void()>> nodes_;
  GradTape* prev_ = nullptr;
};

namespace detail {

template <typename T>
inline bool taping() {
  return GradTape<T>::active() != nullptr;
}

template <typename T, typename... Ts>
inline bool any_requires_grad(const Tensor<T>& first, const Ts&... rest) {
  if constexpr (sizeof...(rest) == 0) {
    return first.requires_grad();
  } else {
    return first.requires_grad() || any_requires_grad(rest...);
  }
}

}  // namespace detail

}  // namespace ssmflow
