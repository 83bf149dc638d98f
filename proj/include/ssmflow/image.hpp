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

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ssmflow/tensor.hpp"

// 8-bit image I/O. PPM (P6) is the dependency-free interchange format; PNG
// (8-bit gray/RGB/RGBA, non-interlaced) is supported through zlib.

namespace ssmflow {

struct Image {
  index_t height = 0;
  index_t width = 0;
  std::vector<std::uint8_t> rgb;  // H x W x 3, row-major

  std::uint8_t& at(index_t y, index_t x, index_t c) {
    return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
  std::uint8_t at(index_t y, index_t x, index_t c) const {
    return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
};

/// Image in [0,1] floats, H x W x 3.
template <typename T>
Tensor<T> image_to_tensor(const Image& img) {
  Tensor<T> t = Tensor<T>::zeros({img.height, img.width, 3});
  for (std::size_t i = 0; i < img.rgb.size(); ++i) t.ptr()[i] = static_cast<T>(img.rgb[i]) / T(255);
  return t;
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t) {
  if (t.rank() != 3 || t.extent(2) != 3) {
    throw ShapeError("tensor_to_image: expected H x W x 3, got " + shape_str(t.shape()));
  }
  Image img;
  img.height = t.extent(0);
  img.width = t.extent(1);
  img.rgb.resize(static_cast<std::size_t>(t.numel()));
  for (std::size_t i = 0; i < img.rgb.size(); ++i) {
    T v = t.ptr()[i];
    v = std::min(T(1), std::max(T(0), v));
    img.rgb[i] = static_cast<std::uint8_t>(std::lround(double(v) * 255.0));
  }
  return img;
}

// ---------------------------------------------------------------------------
// PPM (P6, maxval 255)
// ---------------------------------------------------------------------------

inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_ppm: cannot open " + path);
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!f) throw IoError("write_ppm: short write to " + path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw FormatError("read_ppm: expected P6, found '" + magic + "' in " + path);
  auto next_int = [&]() {
    // skip whitespace and '#' comments
    int c = f.get();
    while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
      if (c == '#') {
        while (c != '\n' && c != EOF) c = f.get();
      }
      c = f.get();
    }
    long v = 0;
    bool any = false;
    while (c >= '0' && c <= '9') {
      v = v * 10 + (c - '0');
      any = true;
      c = f.get();
    }
    if (!any) throw FormatError("read_ppm: malformed header in " + path);
    return v;
  };
  const long w = next_int();
  const long h = next_int();
  const long maxval = next_int();
  if (maxval != 255) throw FormatError("read_ppm: unsupported maxval " + std::to_string(maxval));
  Image img;
  img.width = w;
  img.height = h;
  img.rgb.resize(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3);
  f.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
    throw TruncationError("read_ppm: truncated pixel data in " + path);
  }
  return img;
}

// ---------------------------------------------------------------------------
// PNG (8-bit, non-interlaced; gray / gray+alpha / RGB / RGBA on read)
// ---------------------------------------------------------------------------

namespace detail {

inline void png_put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void png_chunk(std::vector<std::uint8_t>& out, const char type[5],
                      const std::vector<std::uint8_t>& data) {
  png_put_u32be(out, static_cast<std::uint32_t>(data.size()));
  std::vector<std::uint8_t> body(type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  out.insert(out.end(), body.begin(), body.end());
  png_put_u32be(out, static_cast<std::uint32_t>(::crc32(0, body.data(), static_cast<uInt>(body.size()))));
}

inline std::uint32_t png_read_u32be(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

inline std::uint8_t paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return static_cast<std::uint8_t>(a);
  if (pb <= pc) return static_cast<std::uint8_t>(b);
  return static_cast<std::uint8_t>(c);
}

}  // namespace detail

inline void write_png(const Image& img, const std::string& path) {
  // raw stream: one filter byte (0 = none) per scanline
  const std::size_t row = static_cast<std::size_t>(img.width) * 3;
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.height) * (row + 1));
  for (index_t y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const std::uint8_t* src = img.rgb.data() + static_cast<std::size_t>(y) * row;
    raw.insert(raw.end(), src, src + row);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw IoError("write_png: deflate failed");
  }
  compressed.resize(bound);

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<std::uint8_t> ihdr;
  detail::png_put_u32be(ihdr, static_cast<std::uint32_t>(img.width));
  detail::png_put_u32be(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolour
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", compressed);
  detail::png_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write_png: short write to " + path);
}

inline Image read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_png: cannot open " + path);
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0) {
    throw FormatError("read_png: bad signature in " + path);
  }
  std::size_t pos = 8;
  index_t width = 0, height = 0;
  int colortype = -1;
  std::vector<std::uint8_t> idat;
  while (pos + 8 <= buf.size()) {
    const std::uint32_t len = detail::png_read_u32be(buf.data() + pos);
    if (pos + 12 + len > buf.size()) throw TruncationError("read_png: truncated chunk in " + path);
    const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
    const std::uint8_t* data = buf.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      width = detail::png_read_u32be(data);
      height = detail::png_read_u32be(data + 4);
      const int depth = data[8];
      colortype = data[9];
      const int interlace = data[12];
      if (depth != 8) throw FormatError("read_png: unsupported bit depth " + std::to_string(depth));
      if (interlace != 0) throw FormatError("read_png: interlaced files unsupported");
      if (colortype != 0 && colortype != 2 && colortype != 4 && colortype != 6) {
        throw FormatError("read_png: unsupported colour type " + std::to_string(colortype));
      }
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0 || idat.empty()) throw FormatError("read_png: missing IHDR/IDAT in " + path);

  const int channels = (colortype == 0) ? 1 : (colortype == 2) ? 3 : (colortype == 4) ? 2 : 4;
  const std::size_t row = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(height) * (row + 1));
  uLongf raw_size = static_cast<uLongf>(raw.size());
  const int rc = uncompress(raw.data(), &raw_size, idat.data(), static_cast<uLong>(idat.size()));
  if (rc != Z_OK || raw_size != raw.size()) {
    throw FormatError("read_png: inflate failed (" + std::to_string(rc) + ") in " + path);
  }

  // reverse per-row filters
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(height) * row);
  const int bpp = channels;
  for (index_t y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[static_cast<std::size_t>(y) * (row + 1)];
    const std::uint8_t* src = raw.data() + static_cast<std::size_t>(y) * (row + 1) + 1;
    std::uint8_t* dst = pixels.data() + static_cast<std::size_t>(y) * row;
    const std::uint8_t* prev = y > 0 ? pixels.data() + static_cast<std::size_t>(y - 1) * row : nullptr;
    for (std::size_t x = 0; x < row; ++x) {
      const int a = x >= static_cast<std::size_t>(bpp) ? dst[x - bpp] : 0;
      const int b = prev ? prev[x] : 0;
      const int c = (prev && x >= static_cast<std::size_t>(bpp)) ? prev[x - bpp] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += detail::paeth(a, b, c); break;
        default: throw FormatError("read_png: unknown filter " + std::to_string(filter));
      }
      dst[x] = static_cast<std::uint8_t>(v);
    }
  }

  Image img;
  img.width = width;
  img.height = height;
  img.rgb.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
  for (index_t y = 0; y < height; ++y) {
    for (index_t x = 0; x < width; ++x) {
      const std::uint8_t* p = pixels.data() + static_cast<std::size_t>(y) * row +
                              static_cast<std::size_t>(x) * channels;
      std::uint8_t r, g, b;
      if (channels <= 2) {
        r = g = b = p[0];
      } else {
        r = p[0];
        g = p[1];
        b = p[2];
      }
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  }
  return img;
}

/// Dispatch on extension: .png or .ppm.
inline Image read_image(const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".png") return read_png(path);
  return read_ppm(path);
}

inline void write_image(const Image& img, const std::string& path) {
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".png") {
    write_png(img, path);
  } else {
    write_ppm(img, path);
  }
}

}  // namespace ssmflow
