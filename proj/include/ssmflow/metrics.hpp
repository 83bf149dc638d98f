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

#include <optional>

#include "ssmflow/tensor.hpp"

// Optical-flow evaluation metrics. Pure functions over plain tensors; the
// mask selects the pixels that enter a statistic (> 0.5 counts as valid).

namespace ssmflow {

namespace detail {

template <typename T>
void check_flow_pair(const Tensor<T>& pred, const Tensor<T>& gt, const char* op) {
  if (pred.shape() != gt.shape() || pred.rank() != 3 || pred.extent(2) != 2) {
    throw ShapeError(std::string(op) + ": pred " + shape_str(pred.shape()) + " vs gt " +
                     shape_str(gt.shape()));
  }
}

template <typename T>
T pixel_epe(const Tensor<T>& pred, const Tensor<T>& gt, index_t i, index_t j) {
  const T du = pred.at({i, j, 0}) - gt.at({i, j, 0});
  const T dv = pred.at({i, j, 1}) - gt.at({i, j, 1});
  return std::sqrt(du * du + dv * dv);
}

}  // namespace detail

/// Mean end-point error over masked pixels. An undefined mask means "all".
template <typename T>
T epe(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& mask = {}) {
  detail::check_flow_pair(pred, gt, "epe");
  const index_t H = pred.extent(0), W = pred.extent(1);
  T sum = T(0);
  index_t count = 0;
  for (index_t i = 0; i < H; ++i) {
    for (index_t j = 0; j < W; ++j) {
      if (mask.defined() && mask.at({i, j}) <= T(0.5)) continue;
      sum += detail::pixel_epe(pred, gt, i, j);
      ++count;
    }
  }
  if (count == 0) throw ValueError("epe: empty mask");
  return sum / static_cast<T>(count);
}

/// Outlier percentage. With the default (benchmark) convention a pixel is an
/// outlier when its error exceeds 3 px AND 5% of the ground-truth magnitude;
/// use_or switches to the looser either/or reading.
template <typename T>
T f1_all(const Tensor<T>& pred, const Tensor<T>& gt, const Tensor<T>& mask = {}, bool use_or = false) {
  detail::check_flow_pair(pred, gt, "f1_all");
  const index_t H = pred.extent(0), W = pred.extent(1);
  index_t outliers = 0, count = 0;
  for (index_t i = 0; i < H; ++i) {
    for (index_t j = 0; j < W; ++j) {
      if (mask.defined() && mask.at({i, j}) <= T(0.5)) continue;
      const T err = detail::pixel_epe(pred, gt, i, j);
      const T gu = gt.at({i, j, 0});
      const T gv = gt.at({i, j, 1});
      const T mag = std::sqrt(gu * gu + gv * gv);
      const bool abs_bad = err > T(3);
      const bool rel_bad = err > T(0.05) * mag;
      if (use_or ? (abs_bad || rel_bad) : (abs_bad && rel_bad)) ++outliers;
      ++count;
    }
  }
  if (count == 0) throw ValueError("f1_all: empty mask");
  return T(100) * static_cast<T>(outliers) / static_cast<T>(count);
}

/// EPE restricted to pixels whose ground-truth magnitude exceeds 40 px;
/// empty selection yields nullopt.
template <typename T>
std::optional<T> s40(const Tensor<T>& pred, const Tensor<T>& gt) {
  detail::check_flow_pair(pred, gt, "s40");
  const index_t H = pred.extent(0), W = pred.extent(1);
  T sum = T(0);
  index_t count = 0;
  for (index_t i = 0; i < H; ++i) {
    for (index_t j = 0; j < W; ++j) {
      const T gu = gt.at({i, j, 0});
      const T gv = gt.at({i, j, 1});
      if (std::sqrt(gu * gu + gv * gv) <= T(40)) continue;
      sum += detail::pixel_epe(pred, gt, i, j);
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<T>(count);
}

}  // namespace ssmflow
