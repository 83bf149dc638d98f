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

#include "ssmflow/enhancer.hpp"
#include "ssmflow/matching.hpp"

// Autoregressive flow refinement: local cost lookup at the current flow,
// motion encoding, attention-guided aggregation of {motion, context, hidden}
// features, a bidirectional selective-scan layer updating the hidden state,
// and a convolutional head predicting the flow increment.

namespace ssmflow {

// ---------------------------------------------------------------------------
// Cost lookup
// ---------------------------------------------------------------------------

/// For every source pixel, bilinearly samples its 2D cost map on a
/// (2r+1)^2 window centred at (grid + flow); out-of-bounds taps read zero.
/// Differentiable in both the cost volume and the flow.
template <typename T>
Tensor<T> lookup_cost(const Tensor<T>& cost, const Tensor<T>& flow, index_t radius) {
  if (cost.rank() != 4 || flow.rank() != 3 || flow.extent(2) != 2 ||
      cost.extent(0) != flow.extent(0) || cost.extent(1) != flow.extent(1)) {
    throw ShapeError("lookup_cost: cost " + shape_str(cost.shape()) + " vs flow " +
                     shape_str(flow.shape()));
  }
  if (radius < 0) throw ValueError("lookup_cost: radius must be >= 0");
  const index_t H = cost.extent(0), W = cost.extent(1);
  const index_t Ht = cost.extent(2), Wt = cost.extent(3);
  const index_t win = 2 * radius + 1;
  const index_t C = win * win;
  Tensor<T> out = Tensor<T>::zeros({H, W, C});
  const T* cs = cost.ptr();
  const T* fs = flow.ptr();
  T* os = out.ptr();

  auto sample = [&](const T* slab, T x, T y, T* dx_out, T* dy_out) -> T {
    const index_t x0 = static_cast<index_t>(std::floor(x));
    const index_t y0 = static_cast<index_t>(std::floor(y));
    const T fx = x - static_cast<T>(x0);
    const T fy = y - static_cast<T>(y0);
    auto tap = [&](index_t yy, index_t xx) -> T {
      if (yy < 0 || yy >= Ht || xx < 0 || xx >= Wt) return T(0);
      return slab[yy * Wt + xx];
    };
    const T v00 = tap(y0, x0), v01 = tap(y0, x0 + 1);
    const T v10 = tap(y0 + 1, x0), v11 = tap(y0 + 1, x0 + 1);
    if (dx_out) {
      *dx_out = (T(1) - fy) * (v01 - v00) + fy * (v11 - v10);
      *dy_out = (T(1) - fx) * (v10 - v00) + fx * (v11 - v01);
    }
    return (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) + fy * ((T(1) - fx) * v10 + fx * v11);
  };

  parallel_for(H, 2, [&](index_t lo, index_t hi) {
    for (index_t i = lo; i < hi; ++i) {
      for (index_t j = 0; j < W; ++j) {
        const T* slab = cs + (i * W + j) * Ht * Wt;
        const T cx = static_cast<T>(j) + fs[(i * W + j) * 2 + 0];
        const T cy = static_cast<T>(i) + fs[(i * W + j) * 2 + 1];
        T* orow = os + (i * W + j) * C;
        index_t ch = 0;
        for (index_t dy = -radius; dy <= radius; ++dy) {
          for (index_t dx = -radius; dx <= radius; ++dx, ++ch) {
            orow[ch] = sample(slab, cx + static_cast<T>(dx), cy + static_cast<T>(dy), nullptr, nullptr);
          }
        }
      }
    }
  });

  if (detail::taping<T>() && detail::any_requires_grad(cost, flow)) {
    out.set_requires_grad(true);
    auto cd = cost.impl();
    auto fd = flow.impl();
    auto od = out.impl();
    GradTape<T>::active()->record([cd, fd, od, H, W, Ht, Wt, radius, C] {
      const std::vector<T>* g = detail::grad_source(od);
      if (!g) return;
      std::vector<T>* gc = detail::grad_sink(cd);
      std::vector<T>* gf = detail::grad_sink(fd);
      for (index_t i = 0; i < H; ++i) {
        for (index_t j = 0; j < W; ++j) {
          const std::size_t slab_off = static_cast<std::size_t>((i * W + j) * Ht * Wt);
          const T cx = static_cast<T>(j) + fd->values[static_cast<std::size_t>((i * W + j) * 2 + 0)];
          const T cy = static_cast<T>(i) + fd->values[static_cast<std::size_t>((i * W + j) * 2 + 1)];
          T acc_dx = T(0), acc_dy = T(0);
          index_t ch = 0;
          for (index_t dy = -radius; dy <= radius; ++dy) {
            for (index_t dx = -radius; dx <= radius; ++dx, ++ch) {
              const T gv = (*g)[static_cast<std::size_t>((i * W + j) * C + ch)];
              if (gv == T(0)) continue;
              const T x = cx + static_cast<T>(dx);
              const T y = cy + static_cast<T>(dy);
              const index_t x0 = static_cast<index_t>(std::floor(x));
              const index_t y0 = static_cast<index_t>(std::floor(y));
              const T fx = x - static_cast<T>(x0);
              const T fy = y - static_cast<T>(y0);
              auto value = [&](index_t yy, index_t xx) -> T {
                if (yy < 0 || yy >= Ht || xx < 0 || xx >= Wt) return T(0);
                return cd->values[slab_off + static_cast<std::size_t>(yy * Wt + xx)];
              };
              auto scatter = [&](index_t yy, index_t xx, T w) {
                if (!gc || yy < 0 || yy >= Ht || xx < 0 || xx >= Wt) return;
                (*gc)[slab_off + static_cast<std::size_t>(yy * Wt + xx)] += gv * w;
              };
              scatter(y0, x0, (T(1) - fy) * (T(1) - fx));
              scatter(y0, x0 + 1, (T(1) - fy) * fx);
              scatter(y0 + 1, x0, fy * (T(1) - fx));
              scatter(y0 + 1, x0 + 1, fy * fx);
              if (gf) {
                const T v00 = value(y0, x0), v01 = value(y0, x0 + 1);
                const T v10 = value(y0 + 1, x0), v11 = value(y0 + 1, x0 + 1);
                acc_dx += gv * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                acc_dy += gv * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
              }
            }
          }
          if (gf) {
            (*gf)[static_cast<std::size_t>((i * W + j) * 2 + 0)] += acc_dx;
            (*gf)[static_cast<std::size_t>((i * W + j) * 2 + 1)] += acc_dy;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Motion encoder
// ---------------------------------------------------------------------------

template <typename T>
struct MotionEncoder {
  Conv2dLayer<T> conv_flow;  // 2 -> Dm/2
  Conv2dLayer<T> conv_cost;  // (2r+1)^2 -> Dm/2
  Conv2dLayer<T> fuse;       // Dm -> Dm

  static MotionEncoder make(index_t cost_channels, index_t motion_dim, Rng& rng) {
    MotionEncoder m;
    m.conv_flow = Conv2dLayer<T>::make(3, 3, 2, motion_dim / 2, 1, 1, rng);
    m.conv_cost = Conv2dLayer<T>::make(3, 3, cost_channels, motion_dim / 2, 1, 1, rng);
    m.fuse = Conv2dLayer<T>::make(3, 3, motion_dim, motion_dim, 1, 1, rng);
    return m;
  }

  Tensor<T> operator()(const Tensor<T>& flow, const Tensor<T>& costfeat) const {
    Tensor<T> a = gelu(conv_flow(flow));
    Tensor<T> b = gelu(conv_cost(costfeat));
    return fuse(concat_last<T>({a, b}));
  }

  void params(NamedParams<T>& out, const std::string& prefix) {
    conv_flow.params(out, prefix + ".conv_flow");
    conv_cost.params(out, prefix + ".conv_cost");
    fuse.params(out, prefix + ".fuse");
  }
};

// ---------------------------------------------------------------------------
// Feature aggregation: attention-guided or plain concatenation
// ---------------------------------------------------------------------------

/// Projects motion/context/hidden features to a shared width, predicts a
/// per-pixel softmax over the three sources, and returns their convex
/// combination together with the attention maps.
template <typename T>
struct AttentionAggregator {
  Conv2dLayer<T> align_motion;   // Dm -> Dh, 1x1
  Conv2dLayer<T> align_context;  // D  -> Dh, 1x1
  Conv2dLayer<T> align_hidden;   // Dh -> Dh, 1x1
  Conv2dLayer<T> attn1;          // 3Dh -> Dh/2, 3x3
  Conv2dLayer<T> attn2;          // Dh/2 -> 3, 3x3

  static AttentionAggregator make(index_t motion_dim, index_t context_dim, index_t hidden_dim,
                                  Rng& rng) {
    AttentionAggregator a;
    a.align_motion = Conv2dLayer<T>::make(1, 1, motion_dim, hidden_dim, 1, 0, rng);
    a.align_context = Conv2dLayer<T>::make(1, 1, context_dim, hidden_dim, 1, 0, rng);
    a.align_hidden = Conv2dLayer<T>::make(1, 1, hidden_dim, hidden_dim, 1, 0, rng);
    a.attn1 = Conv2dLayer<T>::make(3, 3, 3 * hidden_dim, hidden_dim / 2, 1, 1, rng);
    a.attn2 = Conv2dLayer<T>::make(3, 3, hidden_dim / 2, 3, 1, 1, rng);
    return a;
  }

  std::pair<Tensor<T>, Tensor<T>> operator()(const Tensor<T>& motion, const Tensor<T>& context,
                                             const Tensor<T>& hidden) const {
    Tensor<T> fm = align_motion(motion);
    Tensor<T> fq = align_context(context);
    Tensor<T> fh = align_hidden(hidden);
    Tensor<T> cat = concat_last<T>({fm, fq, fh});
    Tensor<T> attn = softmax(attn2(gelu(attn1(cat))), {2});  // [H x W x 3], sums to 1
    const index_t H = attn.extent(0), W = attn.extent(1);
    auto slot = [&](index_t s) { return reshape(slice_last(attn, s, s + 1), {H, W}); };
    Tensor<T> x = scale_channels(fm, slot(0));
    x = add(x, scale_channels(fq, slot(1)));
    x = add(x, scale_channels(fh, slot(2)));
    return {x, attn};
  }

  void params(NamedParams<T>& out, const std::string& prefix) {
    align_motion.params(out, prefix + ".align_motion");
    align_context.params(out, prefix + ".align_context");
    align_hidden.params(out, prefix + ".align_hidden");
    attn1.params(out, prefix + ".attn1");
    attn2.params(out, prefix + ".attn2");
  }
};

/// Ablation baseline: the same aligned features, fused by channel
/// concatenation and a 1x1 conv instead of attention weighting.
template <typename T>
struct ConcatAggregator {
  Conv2dLayer<T> align_motion;
  Conv2dLayer<T> align_context;
  Conv2dLayer<T> align_hidden;
  Conv2dLayer<T> fuse;  // 3Dh -> Dh, 1x1

  static ConcatAggregator make(index_t motion_dim, index_t context_dim, index_t hidden_dim, Rng& rng) {
    ConcatAggregator a;
    a.align_motion = Conv2dLayer<T>::make(1, 1, motion_dim, hidden_dim, 1, 0, rng);
    a.align_context = Conv2dLayer<T>::make(1, 1, context_dim, hidden_dim, 1, 0, rng);
    a.align_hidden = Conv2dLayer<T>::make(1, 1, hidden_dim, hidden_dim, 1, 0, rng);
    a.fuse = Conv2dLayer<T>::make(1, 1, 3 * hidden_dim, hidden_dim, 1, 0, rng);
    return a;
  }

  Tensor<T> operator()(const Tensor<T>& motion, const Tensor<T>& context,
                       const Tensor<T>& hidden) const {
    Tensor<T> cat = concat_last<T>({align_motion(motion), align_context(context), align_hidden(hidden)});
    return fuse(cat);
  }

  void params(NamedParams<T>& out, const std::string& prefix) {
    align_motion.params(out, prefix + ".align_motion");
    align_context.params(out, prefix + ".align_context");
    align_hidden.params(out, prefix + ".align_hidden");
    fuse.params(out, prefix + ".fuse");
  }
};

// ---------------------------------------------------------------------------
// The refiner
// ---------------------------------------------------------------------------

template <typename T>
struct RefinerConfig {
  index_t context_dim = 128;  // D of the matchable features
  index_t hidden_dim = 128;   // Dh
  index_t motion_dim = 64;    // Dm
  index_t lookup_radius = 4;  // r
  index_t iterations = 2;     // N
  index_t ssm_depth = 1;      // selective-scan layers per step
  index_t state_size = 16;
  index_t expand = 2;
  index_t conv_width = 4;
  bool use_attention = true;     // attention aggregation vs concatenation
  bool bidirectional = true;
};

template <typename T>
struct RefinementState {
  Tensor<T> hidden;  // [H x W x Dh]
  Tensor<T> flow;    // [H x W x 2]
  index_t iteration = 0;
};

template <typename T>
struct Refiner {
  RefinerConfig<T> cfg;
  MotionEncoder<T> motion;
  AttentionAggregator<T> aggregator;
  ConcatAggregator<T> concat_aggregator;
  std::vector<LayerNorm<T>> ssm_norms;
  std::vector<BidirSsmBlock<T>> ssm_layers;
  Conv2dLayer<T> head1;  // Dh -> Dh/2
  Conv2dLayer<T> head2;  // Dh/2 -> 2

  static Refiner make(const RefinerConfig<T>& cfg, Rng& rng) {
    Refiner r;
    r.cfg = cfg;
    const index_t win = 2 * cfg.lookup_radius + 1;
    r.motion = MotionEncoder<T>::make(win * win, cfg.motion_dim, rng);
    if (cfg.use_attention) {
      r.aggregator = AttentionAggregator<T>::make(cfg.motion_dim, cfg.context_dim, cfg.hidden_dim, rng);
    } else {
      r.concat_aggregator = ConcatAggregator<T>::make(cfg.motion_dim, cfg.context_dim, cfg.hidden_dim, rng);
    }
    BidirSsmConfig<T> scfg;
    scfg.dim = cfg.hidden_dim;
    scfg.state_size = cfg.state_size;
    scfg.expand = cfg.expand;
    scfg.conv_width = cfg.conv_width;
    scfg.bidirectional = cfg.bidirectional;
    for (index_t i = 0; i < cfg.ssm_depth; ++i) {
      r.ssm_norms.push_back(LayerNorm<T>::make(cfg.hidden_dim));
      r.ssm_layers.push_back(BidirSsmBlock<T>::make(scfg, rng));
    }
    r.head1 = Conv2dLayer<T>::make(3, 3, cfg.hidden_dim, cfg.hidden_dim / 2, 1, 1, rng);
    r.head2 = Conv2dLayer<T>::make(3, 3, cfg.hidden_dim / 2, 2, 1, 1, rng);
    return r;
  }

  RefinementState<T> initial_state(const Tensor<T>& flow) const {
    RefinementState<T> s;
    s.hidden = Tensor<T>::zeros({flow.extent(0), flow.extent(1), cfg.hidden_dim});
    s.flow = flow;
    s.iteration = 0;
    return s;
  }

  /// Aggregated input for one step; also returns the attention maps (an
  /// undefined tensor under concatenation fusion).
  std::pair<Tensor<T>, Tensor<T>> aggregate(const Tensor<T>& m, const Tensor<T>& context,
                                            const Tensor<T>& hidden) const {
    if (cfg.use_attention) return aggregator(m, context, hidden);
    return {concat_aggregator(m, context, hidden), Tensor<T>()};
  }

  RefinementState<T> step(const RefinementState<T>& state, const Tensor<T>& context,
                          const Tensor<T>& cost) const {
    const index_t H = state.flow.extent(0), W = state.flow.extent(1);
    Tensor<T> costfeat = lookup_cost(cost, state.flow, cfg.lookup_radius);
    Tensor<T> m = motion(state.flow, costfeat);
    auto [x, attn] = aggregate(m, context, state.hidden);
    Tensor<T> seq = flatten_2d(x);
    for (std::size_t i = 0; i < ssm_layers.size(); ++i) {
      seq = add(seq, ssm_layers[i](ssm_norms[i](seq)));
    }
    Tensor<T> hidden = unflatten_2d(seq, H, W);
    Tensor<T> delta = head2(gelu(head1(hidden)));
    RefinementState<T> next;
    next.hidden = hidden;
    next.flow = add(state.flow, delta);
    next.iteration = state.iteration + 1;
    return next;
  }

  /// Runs `iters` steps from the given initial flow; the returned list holds
  /// iters + 1 flows, starting with the initial one.
  std::vector<Tensor<T>> refine(const Tensor<T>& flow_init, const Tensor<T>& context,
                                const Tensor<T>& cost, index_t iters) const {
    if (iters < 0) throw ValueError("refine: iteration count must be >= 0");
    std::vector<Tensor<T>> flows{flow_init};
    RefinementState<T> state = initial_state(flow_init);
    for (index_t i = 0; i < iters; ++i) {
      state = step(state, context, cost);
      flows.push_back(state.flow);
    }
    return flows;
  }

  void params(NamedParams<T>& out, const std::string& prefix) {
    motion.params(out, prefix + ".motion");
    if (cfg.use_attention) {
      aggregator.params(out, prefix + ".aga");
    } else {
      concat_aggregator.params(out, prefix + ".concat");
    }
    for (std::size_t i = 0; i < ssm_layers.size(); ++i) {
      ssm_norms[i].params(out, prefix + ".ssm_norm" + std::to_string(i));
      ssm_layers[i].params(out, prefix + ".ssm" + std::to_string(i));
    }
    head1.params(out, prefix + ".head1");
    head2.params(out, prefix + ".head2");
  }
};

}  // namespace ssmflow
