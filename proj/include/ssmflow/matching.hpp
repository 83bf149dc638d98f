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

// Global matching: all-pairs scaled dot-product cost volume, a softmax
// matching distribution per source pixel, and the initial flow as the
// expectation of target grid coordinates minus the source coordinates.

namespace ssmflow {

/// Default cap on H*W for the 4D volume; O(H^2 W^2) memory is the binding
/// constraint at desk scale, so oversize requests fail loudly.
inline constexpr index_t kDefaultMatchingTokenCap = 4096;

/// Integer pixel grid, G[i, j] = (x = j, y = i).
template <typename T>
Tensor<T> coordinate_grid(index_t H, index_t W) {
  Tensor<T> g = Tensor<T>::zeros({H, W, 2});
  for (index_t i = 0; i < H; ++i) {
    for (index_t j = 0; j < W; ++j) {
      g.at({i, j, 0}) = static_cast<T>(j);
      g.at({i, j, 1}) = static_cast<T>(i);
    }
  }
  return g;
}

/// cost[i,j,k,l] = <Fq[i,j], Fv[k,l]> / sqrt(D).
template <typename T>
Tensor<T> build_cost_volume(const Tensor<T>& fq, const Tensor<T>& fv,
                            index_t token_cap = kDefaultMatchingTokenCap) {
  detail::check_same_shape(fq, fv, "build_cost_volume");
  if (fq.rank() != 3) {
    throw ShapeError("build_cost_volume: expected H x W x D, got " + shape_str(fq.shape()));
  }
  const index_t H = fq.extent(0), W = fq.extent(1), D = fq.extent(2);
  if (H * W > token_cap) {
    throw CapacityError("build_cost_volume: H*W = " + std::to_string(H * W) +
                        " exceeds the configured cap " + std::to_string(token_cap) +
                        " for the 4D cost volume");
  }
  Tensor<T> flat_q = reshape(fq, {H * W, D});
  Tensor<T> flat_v = reshape(fv, {H * W, D});
  Tensor<T> cost = scale(matmul_nt(flat_q, flat_v), T(1) / std::sqrt(static_cast<T>(D)));
  return reshape(cost, {H, W, H, W});
}

/// Softmax jointly over the target dimensions (axes 2 and 3).
template <typename T>
Tensor<T> matching_distribution(const Tensor<T>& cost) {
  if (cost.rank() != 4) {
    throw ShapeError("matching_distribution: expected H x W x H x W, got " + shape_str(cost.shape()));
  }
  return softmax(cost, {2, 3});
}

/// V[i,j] = sum_{k,l} M[i,j,k,l] G[k,l] - G[i,j].
template <typename T>
Tensor<T> initial_flow(const Tensor<T>& m, const Tensor<T>& grid) {
  if (m.rank() != 4 || grid.rank() != 3 || grid.extent(2) != 2 || m.extent(2) != grid.extent(0) ||
      m.extent(3) != grid.extent(1)) {
    throw ShapeError("initial_flow: M " + shape_str(m.shape()) + " vs grid " + shape_str(grid.shape()));
  }
  const index_t H = m.extent(0), W = m.extent(1);
  const index_t Ht = m.extent(2), Wt = m.extent(3);
  Tensor<T> expect = matmul(reshape(m, {H * W, Ht * Wt}), reshape(grid, {Ht * Wt, 2}));
  if (H == Ht && W == Wt) {
    return reshape(sub(expect, reshape(grid, {H * W, 2})), {H, W, 2});
  }
  return reshape(sub(expect, reshape(coordinate_grid<T>(H, W), {H * W, 2})), {H, W, 2});
}

template <typename T>
struct GlobalMatch {
  Tensor<T> flow;  // [H x W x 2], feature-resolution pixels
  Tensor<T> cost;  // [H x W x H x W], retained for refinement
};

template <typename T>
GlobalMatch<T> global_match(const Tensor<T>& fq, const Tensor<T>& fv,
                            index_t token_cap = kDefaultMatchingTokenCap) {
  GlobalMatch<T> out;
  out.cost = build_cost_volume(fq, fv, token_cap);
  Tensor<T> m = matching_distribution(out.cost);
  out.flow = initial_flow(m, coordinate_grid<T>(fq.extent(0), fq.extent(1)));
  return out;
}

}  // namespace ssmflow
