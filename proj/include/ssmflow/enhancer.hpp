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

#include "ssmflow/blocks.hpp"

// Feature-enhancement stack over two streams: per block, a weight-shared
// bidirectional self block on each stream, a pair of cross blocks mixing the
// streams symmetrically, and a shared MLP, all with pre-norm residuals.

namespace ssmflow {

/// Learnable positional embedding at a fixed training resolution; bilinearly
/// resampled when applied at another resolution.
template <typename T>
struct PositionalEmbedding {
  Tensor<T> emb;  // [H x W x D]

  static PositionalEmbedding make(index_t H, index_t W, index_t D, Rng& rng) {
    PositionalEmbedding p;
    p.emb = Tensor<T>::normal({H, W, D}, T(0), T(0.02), rng);
    p.emb.set_requires_grad(true);
    return p;
  }

  Tensor<T> at_resolution(index_t H, index_t W) const {
    if (emb.extent(0) == H && emb.extent(1) == W) return emb;
    return bilinear_resize(emb, H, W);
  }

  void params(NamedParams<T>& out, const std::string& prefix) {
    out.emplace_back(prefix + ".emb", emb);
  }
};

/// Elementwise sum of a feature map and its positional embedding.
template <typename T>
Tensor<T> add_positional(const Tensor<T>& f, const PositionalEmbedding<T>& pos) {
  if (f.rank() != 3) throw ShapeError("add_positional: expected H x W x D, got " + shape_str(f.shape()));
  return add(f, pos.at_resolution(f.extent(0), f.extent(1)));
}

/// Row-major 2D -> 1D: H x W x D -> (H*W) x D. Roundtrips bit-exactly.
template <typename T>
Tensor<T> flatten_2d(const Tensor<T>& f) {
  if (f.rank() != 3) throw ShapeError("flatten_2d: expected H x W x D, got " + shape_str(f.shape()));
  return reshape(f, {f.extent(0) * f.extent(1), f.extent(2)});
}

template <typename T>
Tensor<T> unflatten_2d(const Tensor<T>& f, index_t H, index_t W) {
  if (f.rank() != 2 || f.extent(0) != H * W) {
    throw ShapeError("unflatten_2d: cannot view " + shape_str(f.shape()) + " as " +
                     shape_str({H, W, f.shape().back()}));
  }
  return reshape(f, {H, W, f.extent(1)});
}

template <typename T>
struct EnhancerConfig {
  index_t dim = 128;
  index_t depth = 8;  // block count; 8 balances accuracy and parameters
  index_t state_size = 16;
  index_t expand = 2;
  index_t conv_width = 4;
  index_t mlp_ratio = 4;
  bool use_self = true;
  bool use_cross = true;
  bool use_mlp = true;
  bool tied_cross = false;  // share the 1->2 and 2->1 cross parameters
};

template <typename T>
struct EnhancerBlock {
  LayerNorm<T> ln_self;
  LayerNorm<T> ln_cross;
  LayerNorm<T> ln_mlp;
  BidirSsmBlock<T> self_block;   // one parameter set applied to both streams
  CrossSsmBlock<T> cross_12;
  CrossSsmBlock<T> cross_21;
  Mlp<T> mlp;                    // shared across streams
  const EnhancerConfig<T>* cfg = nullptr;

  static EnhancerBlock make(const EnhancerConfig<T>& cfg, Rng& rng) {
    EnhancerBlock b;
    b.ln_self = LayerNorm<T>::make(cfg.dim);
    b.ln_cross = LayerNorm<T>::make(cfg.dim);
    b.ln_mlp = LayerNorm<T>::make(cfg.dim);
    BidirSsmConfig<T> scfg;
    scfg.dim = cfg.dim;
    scfg.state_size = cfg.state_size;
    scfg.expand = cfg.expand;
    scfg.conv_width = cfg.conv_width;
    b.self_block = BidirSsmBlock<T>::make(scfg, rng);
    CrossSsmConfig<T> ccfg;
    ccfg.dim = cfg.dim;
    ccfg.state_size = cfg.state_size;
    ccfg.conv_width = cfg.conv_width;
    b.cross_12 = CrossSsmBlock<T>::make(ccfg, rng);
    b.cross_21 = cfg.tied_cross ? b.cross_12 : CrossSsmBlock<T>::make(ccfg, rng);
    b.mlp = Mlp<T>::make(cfg.dim, cfg.mlp_ratio, rng);
    return b;
  }

  std::pair<Tensor<T>, Tensor<T>> operator()(Tensor<T> x1, Tensor<T> x2,
                                             const EnhancerConfig<T>& cfg) const {
    if (cfg.use_self) {
      x1 = add(x1, self_block(ln_self(x1)));
      x2 = add(x2, self_block(ln_self(x2)));
    }
    if (cfg.use_cross) {
      Tensor<T> n1 = ln_cross(x1);
      Tensor<T> n2 = ln_cross(x2);
      x1 = add(x1, cross_12(n1, n2));
      x2 = add(x2, cross_21(n2, n1));
    }
    if (cfg.use_mlp) {
      x1 = add(x1, mlp(ln_mlp(x1)));
      x2 = add(x2, mlp(ln_mlp(x2)));
    }
    return {x1, x2};
  }

  void params(NamedParams<T>& out, const std::string& prefix, const EnhancerConfig<T>& cfg) {
    if (cfg.use_self) {
      ln_self.params(out, prefix + ".ln_self");
      self_block.params(out, prefix + ".self");
    }
    if (cfg.use_cross) {
      ln_cross.params(out, prefix + ".ln_cross");
      cross_12.params(out, prefix + ".cross_12");
      if (!cfg.tied_cross) cross_21.params(out, prefix + ".cross_21");
    }
    if (cfg.use_mlp) {
      ln_mlp.params(out, prefix + ".ln_mlp");
      mlp.params(out, prefix + ".mlp");
    }
  }
};

/// The full two-stream stack over H x W x D feature maps.
template <typename T>
struct Enhancer {
  EnhancerConfig<T> cfg;
  std::vector<EnhancerBlock<T>> blocks;

  static Enhancer make(const EnhancerConfig<T>& cfg, Rng& rng) {
    Enhancer e;
    e.cfg = cfg;
    e.blocks.reserve(static_cast<std::size_t>(cfg.depth));
    for (index_t i = 0; i < cfg.depth; ++i) e.blocks.push_back(EnhancerBlock<T>::make(cfg, rng));
    return e;
  }

  std::pair<Tensor<T>, Tensor<T>> operator()(const Tensor<T>& f1, const Tensor<T>& f2) const {
    detail::check_same_shape(f1, f2, "Enhancer");
    const index_t H = f1.extent(0), W = f1.extent(1);
    Tensor<T> x1 = flatten_2d(f1);
    Tensor<T> x2 = flatten_2d(f2);
    for (const auto& block : blocks) {
      auto [y1, y2] = block(x1, x2, cfg);
      x1 = y1;
      x2 = y2;
    }
    return {unflatten_2d(x1, H, W), unflatten_2d(x2, H, W)};
  }

  void params(NamedParams<T>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].params(out, prefix + ".block" + std::to_string(i), cfg);
    }
  }
};

}  // namespace ssmflow
