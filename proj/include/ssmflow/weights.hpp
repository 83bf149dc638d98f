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

#include <cstring>
#include <fstream>

#include "ssmflow/config.hpp"
#include "ssmflow/tensor.hpp"

// Versioned binary weight container. Layout (little-endian):
//   magic "SSMF" | u32 version | u32 config length | config text |
//   u32 tensor count | per tensor: u32 name length, name, u32 rank,
//   u64 extents..., float32 data.

namespace ssmflow {

inline constexpr char kWeightMagic[4] = {'S', 'S', 'M', 'F'};
inline constexpr std::uint32_t kWeightVersion = 1;

struct WeightStore {
  std::string config_text;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  ModelConfig config() const { return ModelConfig::from_text(config_text); }

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

namespace detail {

template <typename V>
void write_raw(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_raw(std::istream& is, const char* what) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) {
    throw TruncationError(std::string("load_weights: truncated while reading ") + what);
  }
  return v;
}

}  // namespace detail

inline void save_weights(const WeightStore& store, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_weights: cannot open " + path);
  f.write(kWeightMagic, 4);
  detail::write_raw(f, kWeightVersion);
  detail::write_raw(f, static_cast<std::uint32_t>(store.config_text.size()));
  f.write(store.config_text.data(), static_cast<std::streamsize>(store.config_text.size()));
  detail::write_raw(f, static_cast<std::uint32_t>(store.tensors.size()));
  for (const auto& [name, t] : store.tensors) {
    detail::write_raw(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_raw(f, static_cast<std::uint32_t>(t.rank()));
    for (index_t e : t.shape()) detail::write_raw(f, static_cast<std::uint64_t>(e));
    f.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * 4));
  }
  if (!f) throw IoError("save_weights: short write to " + path);
}

inline WeightStore load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_weights: cannot open " + path);
  char magic[4] = {};
  if (!f.read(magic, 4)) throw TruncationError("load_weights: empty file " + path);
  if (std::memcmp(magic, kWeightMagic, 4) != 0) {
    throw FormatError("load_weights: bad magic '" + std::string(magic, magic + 4) + "' in " + path +
                      " (expected SSMF)");
  }
  const auto version = detail::read_raw<std::uint32_t>(f, "version");
  if (version != kWeightVersion) {
    throw FormatError("load_weights: unsupported version " + std::to_string(version) + " in " + path);
  }
  const auto cfg_len = detail::read_raw<std::uint32_t>(f, "config length");
  WeightStore store;
  store.config_text.resize(cfg_len);
  if (cfg_len > 0 && !f.read(store.config_text.data(), cfg_len)) {
    throw TruncationError("load_weights: truncated config block in " + path);
  }
  const auto count = detail::read_raw<std::uint32_t>(f, "tensor count");
  store.tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_raw<std::uint32_t>(f, "tensor name length");
    std::string name(name_len, '\0');
    if (name_len > 0 && !f.read(name.data(), name_len)) {
      throw TruncationError("load_weights: truncated tensor name in " + path);
    }
    const auto rank = detail::read_raw<std::uint32_t>(f, "tensor rank");
    Shape shape;
    index_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto e = detail::read_raw<std::uint64_t>(f, "tensor extent");
      shape.push_back(static_cast<index_t>(e));
      numel *= static_cast<index_t>(e);
    }
    std::vector<float> data(static_cast<std::size_t>(numel));
    f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(numel * 4));
    if (f.gcount() != static_cast<std::streamsize>(numel * 4)) {
      throw TruncationError("load_weights: truncated data for tensor '" + name + "' in " + path);
    }
    store.tensors.emplace_back(std::move(name), Tensor<float>::from(std::move(shape), std::move(data)));
  }
  return store;
}

}  // namespace ssmflow
