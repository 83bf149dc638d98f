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

#include <chrono>

#include "ssmflow/config.hpp"
#include "ssmflow/refiner.hpp"
#include "ssmflow/weights.hpp"

// End-to-end assembly: shared-weight convolutional backbone, positional
// embedding, two-stream enhancer, global matching, iterative refinement and
// bilinear flow upsampling. The backbone is a plain residual stack; nothing
// in the downstream modules depends on its particulars.

namespace ssmflow {

namespace detail {

template <typename T>
struct ResidualConvBlock {
  LayerNorm<T> norm;
  Conv2dLayer<T> conv1;
  Conv2dLayer<T> conv2;
  Conv2dLayer<T> skip;  // 1x1, present when stride or width changes
  bool has_skip = false;

  static ResidualConvBlock make(index_t cin, index_t cout, index_t stride, Rng& rng) {
    ResidualConvBlock b;
    b.norm = LayerNorm<T>::make(cin);
    b.conv1 = Conv2dLayer<T>::make(3, 3, cin, cout, stride, 1, rng);
    b.conv2 = Conv2dLayer<T>::make(3, 3, cout, cout, 1, 1, rng);
    b.has_skip = (stride != 1 || cin != cout);
    if (b.has_skip) b.skip = Conv2dLayer<T>::make(1, 1, cin, cout, stride, 0, rng);
    return b;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> h = conv2(gelu(conv1(norm(x))));
    Tensor<T> sk = has_skip ? skip(x) : x;
    return gelu(add(h, sk));
  }

  void params(NamedParams<T>& out, const std::string& prefix) {
    norm.params(out, prefix + ".norm");
    conv1.params(out, prefix + ".conv1");
    conv2.params(out, prefix + ".conv2");
    if (has_skip) skip.params(out, prefix + ".skip");
  }
};

}  // namespace detail

/// Six residual blocks behind a strided stem; reaches stride 4 or 8 and
/// emits D channels. Applied with identical weights to both frames.
template <typename T>
struct Backbone {
  Conv2dLayer<T> stem;  // 7x7, stride 2
  std::vector<detail::ResidualConvBlock<T>> blocks;
  Conv2dLayer<T> out;  // 1x1 -> D

  static Backbone make(const ModelConfig& cfg, Rng& rng) {
    Backbone b;
    const index_t c1 = std::max<index_t>(16, cfg.dim / 4);
    const index_t c2 = std::max<index_t>(24, cfg.dim / 2);
    const index_t c3 = cfg.dim;
    b.stem = Conv2dLayer<T>::make(7, 7, 3, c1, 2, 3, rng);
    const index_t s_last = cfg.downsample == 8 ? 2 : 1;
    b.blocks.push_back(detail::ResidualConvBlock<T>::make(c1, c1, 1, rng));
    b.blocks.push_back(detail::ResidualConvBlock<T>::make(c1, c2, 2, rng));
    b.blocks.push_back(detail::ResidualConvBlock<T>::make(c2, c2, 1, rng));
    b.blocks.push_back(detail::ResidualConvBlock<T>::make(c2, c3, s_last, rng));
    b.blocks.push_back(detail::ResidualConvBlock<T>::make(c3, c3, 1, rng));
    b.blocks.push_back(detail::ResidualConvBlock<T>::make(c3, c3, 1, rng));
    b.out = Conv2dLayer<T>::make(1, 1, c3, cfg.dim, 1, 0, rng);
    return b;
  }

  Tensor<T> operator()(const Tensor<T>& img) const {
    Tensor<T> x = gelu(stem(img));
    for (const auto& blk : blocks) x = blk(x);
    return out(x);
  }

  void params(NamedParams<T>& out_params, const std::string& prefix) {
    stem.params(out_params, prefix + ".stem");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].params(out_params, prefix + ".block" + std::to_string(i));
    }
    out.params(out_params, prefix + ".out");
  }
};

/// Bilinear upsampling of a feature-resolution flow to image resolution,
/// with displacement magnitudes scaled by the resolution ratio.
template <typename T>
Tensor<T> upsample_flow(const Tensor<T>& flow, index_t Himg, index_t Wimg) {
  const T sy = static_cast<T>(Himg) / static_cast<T>(flow.extent(0));
  Tensor<T> up = bilinear_resize(flow, Himg, Wimg);
  return scale(up, sy);
}

struct StageTimes {
  double backbone_ms = 0;
  double enhancer_ms = 0;
  double matching_ms = 0;
  double refiner_ms = 0;
};

template <typename T>
struct ModelOutput {
  Tensor<T> flow_image;                // [Himg x Wimg x 2]
  std::vector<Tensor<T>> flows;        // feature resolution, length N_iter + 1
  Tensor<T> features_q;                // enhanced features of the first frame
};

template <typename T>
struct Model {
  ModelConfig cfg;
  Backbone<T> backbone;
  PositionalEmbedding<T> pos;
  Enhancer<T> enhancer;
  Refiner<T> refiner;

  static Model make(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    Rng rng(seed ^ 0x5f5f5f5fULL);
    m.backbone = Backbone<T>::make(cfg, rng);
    m.pos = PositionalEmbedding<T>::make(cfg.pos_height, cfg.pos_width, cfg.dim, rng);
    EnhancerConfig<T> ecfg;
    ecfg.dim = cfg.dim;
    ecfg.depth = cfg.blocks;
    ecfg.state_size = cfg.state_size;
    ecfg.expand = cfg.expand;
    ecfg.conv_width = cfg.conv_width;
    ecfg.mlp_ratio = cfg.mlp_ratio;
    ecfg.use_self = cfg.use_self;
    ecfg.use_cross = cfg.use_cross;
    ecfg.use_mlp = cfg.use_mlp;
    m.enhancer = Enhancer<T>::make(ecfg, rng);
    RefinerConfig<T> rcfg;
    rcfg.context_dim = cfg.dim;
    rcfg.hidden_dim = cfg.hidden_dim;
    rcfg.motion_dim = cfg.motion_dim;
    rcfg.lookup_radius = cfg.lookup_radius;
    rcfg.iterations = cfg.iterations;
    rcfg.ssm_depth = cfg.refiner_depth;
    rcfg.state_size = cfg.state_size;
    rcfg.expand = cfg.expand;
    rcfg.conv_width = cfg.conv_width;
    rcfg.use_attention = cfg.use_aga;
    rcfg.bidirectional = cfg.refiner_bidirectional;
    m.refiner = Refiner<T>::make(rcfg, rng);
    return m;
  }

  /// Shared-weight feature extraction for one frame.
  Tensor<T> extract_features(const Tensor<T>& img) const {
    if (img.rank() != 3 || img.extent(2) != 3) {
      throw ShapeError("extract_features: expected H x W x 3, got " + shape_str(img.shape()));
    }
    if (img.extent(0) % cfg.downsample != 0 || img.extent(1) % cfg.downsample != 0) {
      throw ShapeError("extract_features: image size " + std::to_string(img.extent(0)) + "x" +
                       std::to_string(img.extent(1)) + " is not divisible by the backbone stride " +
                       std::to_string(cfg.downsample) + "; pad the input to a multiple");
    }
    return backbone(img);
  }

  ModelOutput<T> forward(const Tensor<T>& img1, const Tensor<T>& img2, index_t iters_override = -1,
                         StageTimes* times = nullptr) const {
    using clock = std::chrono::steady_clock;
    auto tick = clock::now();
    auto lap = [&](double& slot) {
      auto now = clock::now();
      slot += std::chrono::duration<double, std::milli>(now - tick).count();
      tick = now;
    };
    detail::check_same_shape(img1, img2, "Model::forward");
    const index_t Himg = img1.extent(0), Wimg = img1.extent(1);

    Tensor<T> f1 = extract_features(img1);
    Tensor<T> f2 = extract_features(img2);
    StageTimes scratch;
    StageTimes& tt = times ? *times : scratch;
    lap(tt.backbone_ms);

    if (cfg.use_pos) {
      f1 = add_positional(f1, pos);
      f2 = add_positional(f2, pos);
    }
    auto [fq, fv] = enhancer(f1, f2);
    lap(tt.enhancer_ms);

    GlobalMatch<T> gm = global_match(fq, fv, cfg.token_cap);
    lap(tt.matching_ms);

    const index_t iters = iters_override >= 0 ? iters_override : cfg.iterations;
    ModelOutput<T> out;
    out.flows = refiner.refine(gm.flow, fq, gm.cost, iters);
    out.flow_image = upsample_flow(out.flows.back(), Himg, Wimg);
    out.features_q = fq;
    lap(tt.refiner_ms);
    return out;
  }

  NamedParams<T> named_parameters() {
    NamedParams<T> out;
    backbone.params(out, "backbone");
    if (cfg.use_pos) pos.params(out, "pos");
    enhancer.params(out, "enhancer");
    refiner.params(out, "refiner");
    return out;
  }

  index_t parameter_count() {
    index_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

  WeightStore to_store() {
    WeightStore store;
    store.config_text = cfg.to_text();
    for (auto& [name, t] : named_parameters()) {
      store.tensors.emplace_back(name, t.template cast<float>());
    }
    return store;
  }

  /// Copies stored tensors into this model. The stored config must match
  /// this model's config exactly.
  void load_store(const WeightStore& store) {
    const ModelConfig stored = store.config();
    const std::string mismatch = cfg.first_mismatch(stored);
    if (!mismatch.empty()) {
      throw ConfigMismatchError("load_store: config field '" + mismatch +
                                "' differs between the model and the weight file");
    }
    NamedParams<T> params = named_parameters();
    if (params.size() != store.tensors.size()) {
      throw ConfigMismatchError("load_store: parameter count mismatch (" +
                                std::to_string(params.size()) + " in model, " +
                                std::to_string(store.tensors.size()) + " stored)");
    }
    for (auto& [name, t] : params) {
      const Tensor<float>* src = store.find(name);
      if (!src) throw ConfigMismatchError("load_store: missing tensor '" + name + "' in weight file");
      if (src->shape() != t.shape()) {
        throw ConfigMismatchError("load_store: shape mismatch for '" + name + "': model " +
                                  shape_str(t.shape()) + " vs stored " + shape_str(src->shape()));
      }
      for (index_t i = 0; i < t.numel(); ++i) t.ptr()[i] = static_cast<T>(src->ptr()[i]);
    }
  }
};

/// Exponentially weighted sum of per-iteration L1 losses; the final
/// iteration carries weight gamma^0 = 1. Each flow must match gt's shape.
/// The per-pixel L1 is |du| + |dv| averaged over pixels.
template <typename T>
Tensor<T> sequence_loss(const std::vector<Tensor<T>>& flows, const Tensor<T>& gt, T gamma) {
  if (gamma <= T(0) || gamma > T(1)) throw ValueError("sequence_loss: gamma must be in (0, 1]");
  if (flows.empty()) throw ValueError("sequence_loss: no predictions");
  const index_t pixels = gt.extent(0) * gt.extent(1);
  Tensor<T> total = Tensor<T>::scalar(T(0));
  const index_t N = static_cast<index_t>(flows.size()) - 1;
  for (index_t i = 0; i <= N; ++i) {
    if (flows[static_cast<std::size_t>(i)].shape() != gt.shape()) {
      throw ShapeError("sequence_loss: prediction " + std::to_string(i) + " shape " +
                       shape_str(flows[static_cast<std::size_t>(i)].shape()) + " vs gt " +
                       shape_str(gt.shape()));
    }
    const T w = std::pow(gamma, static_cast<T>(N - i));
    Tensor<T> l1 = scale(sum_all(ssmflow::abs(sub(flows[static_cast<std::size_t>(i)], gt))),
                         T(1) / static_cast<T>(pixels));
    total = add(total, scale(l1, w));
  }
  return total;
}

}  // namespace ssmflow
