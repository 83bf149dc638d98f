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

#include <vector>

#include "ssmflow/tensor.hpp"

// Procedural flow samples with exact ground truth. A smooth analytic texture
// is evaluated directly for the first frame and through the inverse warp for
// the second, so the flow is correct by construction and the pair satisfies
// warp consistency up to bilinear interpolation error.

namespace ssmflow {

template <typename T>
struct FlowSample {
  Tensor<T> img1;      // [H x W x 3], values in (0, 1)
  Tensor<T> img2;
  Tensor<T> gt;        // [H x W x 2]: img2(p + gt(p)) == img1(p)
  Tensor<T> valid;     // [H x W], all ones (ground truth is dense)
  Tensor<T> occluded;  // [H x W], 1 where p + gt(p) leaves the frame
};

namespace detail {

// Sum of broad Gaussians and gentle plane waves; kept smooth enough that
// bilinear resampling stays well under the warp-consistency tolerance.
template <typename T>
struct SmoothTexture {
  struct Blob {
    T cx, cy, inv2s2;
    T amp[3];
  };
  struct Wave {
    T kx, ky, phase;
    T amp[3];
  };
  std::vector<Blob> blobs;
  std::vector<Wave> waves;

  static SmoothTexture make(index_t size, Rng& rng) {
    SmoothTexture t;
    for (int b = 0; b < 8; ++b) {
      Blob blob;
      blob.cx = static_cast<T>(rng.uniform(0, size - 1));
      blob.cy = static_cast<T>(rng.uniform(0, size - 1));
      const T sigma = static_cast<T>(rng.uniform(5.0, 11.0));
      blob.inv2s2 = T(1) / (T(2) * sigma * sigma);
      for (int c = 0; c < 3; ++c) blob.amp[c] = static_cast<T>(rng.uniform(-0.11, 0.11));
      t.blobs.push_back(blob);
    }
    for (int w = 0; w < 4; ++w) {
      Wave wave;
      const T lambda = static_cast<T>(rng.uniform(14.0, 34.0));
      const T angle = static_cast<T>(rng.uniform(0.0, 2.0 * M_PI));
      wave.kx = static_cast<T>(2.0 * M_PI / lambda * std::cos(angle));
      wave.ky = static_cast<T>(2.0 * M_PI / lambda * std::sin(angle));
      wave.phase = static_cast<T>(rng.uniform(0.0, 2.0 * M_PI));
      for (int c = 0; c < 3; ++c) wave.amp[c] = static_cast<T>(rng.uniform(-0.06, 0.06));
      t.waves.push_back(wave);
    }
    return t;
  }

  void eval(T x, T y, T* rgb) const {
    rgb[0] = rgb[1] = rgb[2] = T(0.5);
    for (const Blob& b : blobs) {
      const T dx = x - b.cx, dy = y - b.cy;
      const T g = std::exp(-(dx * dx + dy * dy) * b.inv2s2);
      for (int c = 0; c < 3; ++c) rgb[c] += b.amp[c] * g;
    }
    for (const Wave& w : waves) {
      const T s = std::sin(w.kx * x + w.ky * y + w.phase);
      for (int c = 0; c < 3; ++c) rgb[c] += w.amp[c] * s;
    }
  }
};

}  // namespace detail

template <typename T>
struct SyntheticOptions {
  index_t size = 32;
  T max_disp = T(4);
  bool rotations = true;  // mix small rotations in with the translations
};

/// One sample from a rigid motion: W(p) = R(p - c) + c + t, gt = W(p) - p,
/// img1 = tex(p), img2 = tex(W^{-1}(p)).
template <typename T>
FlowSample<T> make_rigid_sample(std::uint64_t seed, index_t size, T tx, T ty, T angle_rad) {
  Rng rng(seed);
  auto tex = detail::SmoothTexture<T>::make(size, rng);
  const T c = static_cast<T>(size - 1) / T(2);
  const T cosr = std::cos(angle_rad), sinr = std::sin(angle_rad);

  FlowSample<T> s;
  s.img1 = Tensor<T>::zeros({size, size, 3});
  s.img2 = Tensor<T>::zeros({size, size, 3});
  s.gt = Tensor<T>::zeros({size, size, 2});
  s.valid = Tensor<T>::filled({size, size}, T(1));
  s.occluded = Tensor<T>::zeros({size, size});

  for (index_t i = 0; i < size; ++i) {
    for (index_t j = 0; j < size; ++j) {
      const T x = static_cast<T>(j), y = static_cast<T>(i);
      tex.eval(x, y, &s.img1.at({i, j, 0}));
      // inverse warp: R^-1((p - t) - c) + c
      const T qx = x - tx - c, qy = y - ty - c;
      tex.eval(cosr * qx + sinr * qy + c, -sinr * qx + cosr * qy + c, &s.img2.at({i, j, 0}));
      // forward map and ground truth
      const T px = x - c, py = y - c;
      const T wx = cosr * px - sinr * py + c + tx;
      const T wy = sinr * px + cosr * py + c + ty;
      s.gt.at({i, j, 0}) = wx - x;
      s.gt.at({i, j, 1}) = wy - y;
      if (wx < T(0) || wx > static_cast<T>(size - 1) || wy < T(0) || wy > static_cast<T>(size - 1)) {
        s.occluded.at({i, j}) = T(1);
      }
    }
  }
  return s;
}

template <typename T>
FlowSample<T> make_translation_sample(std::uint64_t seed, index_t size, T dx, T dy) {
  return make_rigid_sample<T>(seed, size, dx, dy, T(0));
}

/// Deterministic list of samples; seeds are derived from the base seed so
/// sample k is reproducible in isolation.
template <typename T>
std::vector<FlowSample<T>> gen_synthetic(std::uint64_t seed, index_t count,
                                         const SyntheticOptions<T>& opt) {
  std::vector<FlowSample<T>> out;
  out.reserve(static_cast<std::size_t>(count));
  Rng rng(seed);
  for (index_t k = 0; k < count; ++k) {
    const std::uint64_t sample_seed = rng.next();
    T tx = static_cast<T>(rng.uniform(-opt.max_disp, opt.max_disp));
    T ty = static_cast<T>(rng.uniform(-opt.max_disp, opt.max_disp));
    if (rng.uniform01() < 0.5) {  // half integer, half fractional shifts
      tx = std::round(tx);
      ty = std::round(ty);
    }
    T angle = T(0);
    if (opt.rotations && rng.uniform01() < 0.4) {
      angle = static_cast<T>(rng.uniform(-2.0, 2.0) * M_PI / 180.0);
    }
    out.push_back(make_rigid_sample<T>(sample_seed, opt.size, tx, ty, angle));
  }
  return out;
}

/// Bilinear backward warp: out(p) = img(p + flow(p)), edge-clamped. Used by
/// the warp-consistency oracle and evaluation tooling.
template <typename T>
Tensor<T> backward_warp(const Tensor<T>& img, const Tensor<T>& flow) {
  if (img.rank() != 3 || flow.rank() != 3 || flow.extent(2) != 2 || img.extent(0) != flow.extent(0) ||
      img.extent(1) != flow.extent(1)) {
    throw ShapeError("backward_warp: img " + shape_str(img.shape()) + " vs flow " +
                     shape_str(flow.shape()));
  }
  const index_t H = img.extent(0), W = img.extent(1), C = img.extent(2);
  Tensor<T> out = Tensor<T>::zeros(img.shape());
  for (index_t i = 0; i < H; ++i) {
    for (index_t j = 0; j < W; ++j) {
      T x = static_cast<T>(j) + flow.at({i, j, 0});
      T y = static_cast<T>(i) + flow.at({i, j, 1});
      x = std::min(std::max(x, T(0)), static_cast<T>(W - 1));
      y = std::min(std::max(y, T(0)), static_cast<T>(H - 1));
      const index_t x0 = std::min(static_cast<index_t>(std::floor(x)), W - 2 >= 0 ? W - 2 : 0);
      const index_t y0 = std::min(static_cast<index_t>(std::floor(y)), H - 2 >= 0 ? H - 2 : 0);
      const T fx = x - static_cast<T>(x0);
      const T fy = y - static_cast<T>(y0);
      for (index_t ch = 0; ch < C; ++ch) {
        const T v00 = img.at({y0, x0, ch});
        const T v01 = img.at({y0, std::min(x0 + 1, W - 1), ch});
        const T v10 = img.at({std::min(y0 + 1, H - 1), x0, ch});
        const T v11 = img.at({std::min(y0 + 1, H - 1), std::min(x0 + 1, W - 1), ch});
        out.at({i, j, ch}) =
            (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) + fy * ((T(1) - fx) * v10 + fx * v11);
      }
    }
  }
  return out;
}

}  // namespace ssmflow
