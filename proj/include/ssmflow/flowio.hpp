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
#include <array>
#include <cstring>
#include <fstream>

#include "ssmflow/image.hpp"

// Middlebury .flo interchange and the standard flow colour rendering.

namespace ssmflow {

inline constexpr float kFloMagic = 202021.25f;

/// Writes H x W x 2 flow as .flo: float magic, int32 width, int32 height,
/// then row-major interleaved (u, v) float32, all little-endian.
template <typename T>
void write_flo(const Tensor<T>& flow, const std::string& path) {
  if (flow.rank() != 3 || flow.extent(2) != 2) {
    throw ShapeError("write_flo: expected H x W x 2, got " + shape_str(flow.shape()));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_flo: cannot open " + path);
  const float magic = kFloMagic;
  const std::int32_t w = static_cast<std::int32_t>(flow.extent(1));
  const std::int32_t h = static_cast<std::int32_t>(flow.extent(0));
  f.write(reinterpret_cast<const char*>(&magic), 4);
  f.write(reinterpret_cast<const char*>(&w), 4);
  f.write(reinterpret_cast<const char*>(&h), 4);
  std::vector<float> row(static_cast<std::size_t>(w) * 2);
  for (index_t i = 0; i < h; ++i) {
    for (index_t j = 0; j < w; ++j) {
      row[static_cast<std::size_t>(j * 2 + 0)] = static_cast<float>(flow.at({i, j, 0}));
      row[static_cast<std::size_t>(j * 2 + 1)] = static_cast<float>(flow.at({i, j, 1}));
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * 4));
  }
  if (!f) throw IoError("write_flo: short write to " + path);
}

template <typename T = float>
Tensor<T> read_flo(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_flo: cannot open " + path);
  float magic = 0;
  if (!f.read(reinterpret_cast<char*>(&magic), 4)) throw TruncationError("read_flo: empty file " + path);
  if (magic != kFloMagic) {
    throw FormatError("read_flo: bad magic " + std::to_string(magic) + " (expected 202021.25) in " + path);
  }
  std::int32_t w = 0, h = 0;
  if (!f.read(reinterpret_cast<char*>(&w), 4) || !f.read(reinterpret_cast<char*>(&h), 4)) {
    throw TruncationError("read_flo: truncated header in " + path);
  }
  if (w < 1 || h < 1 || w > 100000 || h > 100000) {
    throw FormatError("read_flo: implausible size " + std::to_string(w) + "x" + std::to_string(h));
  }
  std::vector<float> data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 2);
  f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * 4));
  if (f.gcount() != static_cast<std::streamsize>(data.size() * 4)) {
    throw TruncationError("read_flo: truncated pixel data in " + path);
  }
  Tensor<T> out = Tensor<T>::zeros({h, w, 2});
  for (std::size_t i = 0; i < data.size(); ++i) out.ptr()[i] = static_cast<T>(data[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Flow colour wheel (55-segment convention used by the standard benchmarks)
// ---------------------------------------------------------------------------

namespace detail {

inline const std::vector<std::array<float, 3>>& flow_colorwheel() {
  static const std::vector<std::array<float, 3>> wheel = [] {
    const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::vector<std::array<float, 3>> w;
    w.reserve(RY + YG + GC + CB + BM + MR);
    for (int i = 0; i < RY; ++i) w.push_back({255.f, 255.f * i / RY, 0.f});
    for (int i = 0; i < YG; ++i) w.push_back({255.f - 255.f * i / YG, 255.f, 0.f});
    for (int i = 0; i < GC; ++i) w.push_back({0.f, 255.f, 255.f * i / GC});
    for (int i = 0; i < CB; ++i) w.push_back({0.f, 255.f - 255.f * i / CB, 255.f});
    for (int i = 0; i < BM; ++i) w.push_back({255.f * i / BM, 0.f, 255.f});
    for (int i = 0; i < MR; ++i) w.push_back({255.f, 0.f, 255.f - 255.f * i / MR});
    return w;
  }();
  return wheel;
}

inline void flow_vector_color(double u, double v, std::uint8_t* rgb) {
  const auto& wheel = flow_colorwheel();
  const int ncols = static_cast<int>(wheel.size());
  const double rad = std::sqrt(u * u + v * v);
  const double a = std::atan2(-v, -u) / M_PI;  // [-1, 1]
  const double fk = (a + 1.0) / 2.0 * (ncols - 1);
  const int k0 = static_cast<int>(std::floor(fk));
  const int k1 = (k0 + 1) % ncols;
  const double f = fk - k0;
  for (int c = 0; c < 3; ++c) {
    double col = ((1.0 - f) * wheel[static_cast<std::size_t>(k0)][static_cast<std::size_t>(c)] +
                  f * wheel[static_cast<std::size_t>(k1)][static_cast<std::size_t>(c)]) /
                 255.0;
    if (rad <= 1.0) {
      col = 1.0 - rad * (1.0 - col);  // saturation grows with magnitude; zero flow is white
    } else {
      col *= 0.75;  // out of range
    }
    rgb[c] = static_cast<std::uint8_t>(std::lround(255.0 * col));
  }
}

}  // namespace detail

/// Renders a flow field with the standard colour wheel. max_norm <= 0 picks
/// the 99th percentile of the magnitudes automatically.
template <typename T>
Image flow_to_color(const Tensor<T>& flow, double max_norm = 0.0) {
  if (flow.rank() != 3 || flow.extent(2) != 2) {
    throw ShapeError("flow_to_color: expected H x W x 2, got " + shape_str(flow.shape()));
  }
  const index_t H = flow.extent(0), W = flow.extent(1);
  if (max_norm <= 0.0) {
    std::vector<double> mags;
    mags.reserve(static_cast<std::size_t>(H * W));
    for (index_t i = 0; i < H; ++i) {
      for (index_t j = 0; j < W; ++j) {
        const double u = flow.at({i, j, 0});
        const double v = flow.at({i, j, 1});
        mags.push_back(std::sqrt(u * u + v * v));
      }
    }
    std::size_t q = static_cast<std::size_t>(0.99 * (mags.size() - 1));
    std::nth_element(mags.begin(), mags.begin() + q, mags.end());
    max_norm = mags[q];
    if (max_norm < 1e-9) max_norm = 1.0;  // all-zero field stays white
  }
  Image img;
  img.height = H;
  img.width = W;
  img.rgb.resize(static_cast<std::size_t>(H * W * 3));
  for (index_t i = 0; i < H; ++i) {
    for (index_t j = 0; j < W; ++j) {
      detail::flow_vector_color(flow.at({i, j, 0}) / max_norm, flow.at({i, j, 1}) / max_norm,
                                &img.rgb[static_cast<std::size_t>((i * W + j) * 3)]);
    }
  }
  return img;
}

}  // namespace ssmflow
