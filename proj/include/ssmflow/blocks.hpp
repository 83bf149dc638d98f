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

#include <array>

#include "ssmflow/nn.hpp"
#include "ssmflow/ssm.hpp"

// Sequence blocks. The self block runs a gated selective scan over one
// sequence in both directions and sums the results; the cross block scans the
// first sequence with scan parameters derived jointly from both sequences,
// letting the second stream modulate the first.

namespace ssmflow {

template <typename T>
struct BidirSsmConfig {
  index_t dim = 64;           // D
  index_t state_size = 16;    // N
  index_t expand = 2;         // E = expand * D
  index_t conv_width = 4;     // k
  bool tied_directions = false;
  bool bidirectional = true;
};

namespace detail {

template <typename T>
struct SsmDirection {
  Linear<T> in_proj;       // D -> 2E (scan input and gate)
  CausalConv1d<T> conv;    // depthwise over E
  Linear<T> proj_B;        // E -> N
  Linear<T> proj_C;        // E -> N
  Linear<T> proj_delta;    // E -> E
  Tensor<T> A;             // [E x N]
  Linear<T> out_proj;      // E -> D

  static SsmDirection make(const BidirSsmConfig<T>& cfg, Rng& rng) {
    const index_t E = cfg.expand * cfg.dim;
    SsmDirection d;
    d.in_proj = Linear<T>::make(cfg.dim, 2 * E, rng);
    d.conv = CausalConv1d<T>::make(E, cfg.conv_width, rng);
    d.proj_B = Linear<T>::make(E, cfg.state_size, rng);
    d.proj_C = Linear<T>::make(E, cfg.state_size, rng);
    d.proj_delta = Linear<T>::make(E, E, rng);
    init_delta_bias(d.proj_delta.bias, rng);
    d.A = init_state_matrix<T>(E, cfg.state_size);
    d.A.set_requires_grad(true);
    d.out_proj = Linear<T>::make(E, cfg.dim, rng);
    return d;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    const index_t E = A.extent(0);
    Tensor<T> xz = in_proj(x);
    Tensor<T> xin = slice_last(xz, 0, E);
    Tensor<T> gate = slice_last(xz, E, 2 * E);
    Tensor<T> xc = silu(conv(xin));
    SelectiveParams<T> sp = selective_params(xc, proj_B.weight, proj_B.bias, proj_C.weight,
                                             proj_C.bias, proj_delta.weight, proj_delta.bias);
    ScanParams<T> scan = make_scan_params(sp, A);
    Tensor<T> y = scan_sequential(scan, xc);
    y = mul(y, silu(gate));
    return out_proj(y);
  }

  void params(NamedParams<T>& out, const std::string& prefix) {
    in_proj.params(out, prefix + ".in_proj");
    conv.params(out, prefix + ".conv");
    proj_B.params(out, prefix + ".proj_b");
    proj_C.params(out, prefix + ".proj_c");
    proj_delta.params(out, prefix + ".proj_delta");
    out.emplace_back(prefix + ".a", A);
    out_proj.params(out, prefix + ".out_proj");
  }
};

}  // namespace detail

/// Bidirectional gated selective-scan block: forward pass plus a pass over
/// the reversed sequence (re-reversed on output), summed. The two directions
/// hold separate parameters unless tied for testing.
template <typename T>
struct BidirSsmBlock {
  BidirSsmConfig<T> cfg;
  detail::SsmDirection<T> fwd;
  detail::SsmDirection<T> bwd;

  static BidirSsmBlock make(const BidirSsmConfig<T>& cfg, Rng& rng) {
    BidirSsmBlock b;
    b.cfg = cfg;
    b.fwd = detail::SsmDirection<T>::make(cfg, rng);
    b.bwd = cfg.tied_directions ? b.fwd : detail::SsmDirection<T>::make(cfg, rng);
    return b;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> out = fwd(x);
    if (cfg.bidirectional) {
      out = add(out, reverse(bwd(reverse(x, 0)), 0));
    }
    return out;
  }

  void params(NamedParams<T>& out, const std::string& prefix) {
    fwd.params(out, prefix + ".fwd");
    if (!cfg.tied_directions) bwd.params(out, prefix + ".bwd");
  }
};

template <typename T>
struct CrossSsmConfig {
  index_t dim = 64;         // D (no expansion; the scan runs at D)
  index_t state_size = 16;  // N
  index_t conv_width = 4;
  bool tied_directions = false;
};

namespace detail {

template <typename T>
struct CrossDirection {
  CausalConv1d<T> conv;   // main branch, depthwise over D
  Linear<T> mod_proj;     // D -> D, modulation branch
  Linear<T> joint;        // 2D -> (D + 2N): [delta; B; C]
  Tensor<T> A;            // [D x N]
  Linear<T> out_proj;     // D -> D

  static CrossDirection make(const CrossSsmConfig<T>& cfg, Rng& rng) {
    CrossDirection d;
    d.conv = CausalConv1d<T>::make(cfg.dim, cfg.conv_width, rng);
    d.mod_proj = Linear<T>::make(cfg.dim, cfg.dim, rng);
    d.joint = Linear<T>::make(2 * cfg.dim, cfg.dim + 2 * cfg.state_size, rng);
    init_delta_bias(d.joint.bias, rng, 0, cfg.dim);
    d.A = init_state_matrix<T>(cfg.dim, cfg.state_size);
    d.A.set_requires_grad(true);
    d.out_proj = Linear<T>::make(cfg.dim, cfg.dim, rng);
    return d;
  }

  Tensor<T> operator()(const Tensor<T>& main, const Tensor<T>& mod) const {
    const index_t D = A.extent(0);
    const index_t N = A.extent(1);
    Tensor<T> xc = silu(conv(main));
    Tensor<T> xm = mod_proj(mod);
    Tensor<T> g = joint(concat_last<T>({xc, xm}));
    Tensor<T> delta = softplus(slice_last(g, 0, D));
    Tensor<T> B = slice_last(g, D, D + N);
    Tensor<T> C = slice_last(g, D + N, D + 2 * N);
    auto [abar, bbar] = zoh_discretize(delta, A, B);
    Tensor<T> y = selective_scan_seq(abar, bbar, C, xc);
    return out_proj(y);
  }

  void params(NamedParams<T>& out, const std::string& prefix) {
    conv.params(out, prefix + ".conv");
    mod_proj.params(out, prefix + ".mod_proj");
    joint.params(out, prefix + ".joint");
    out.emplace_back(prefix + ".a", A);
    out_proj.params(out, prefix + ".out_proj");
  }
};

}  // namespace detail

/// Cross-modulated selective-scan block. The first stream is the scanned
/// ("main") sequence; the second contributes only through the jointly
/// projected scan parameters [delta; B; C]. Applied in both directions (both
/// streams reversed for the backward pass) and summed.
template <typename T>
struct CrossSsmBlock {
  CrossSsmConfig<T> cfg;
  detail::CrossDirection<T> fwd;
  detail::CrossDirection<T> bwd;

  static CrossSsmBlock make(const CrossSsmConfig<T>& cfg, Rng& rng) {
    CrossSsmBlock b;
    b.cfg = cfg;
    b.fwd = detail::CrossDirection<T>::make(cfg, rng);
    b.bwd = cfg.tied_directions ? b.fwd : detail::CrossDirection<T>::make(cfg, rng);
    return b;
  }

  Tensor<T> operator()(const Tensor<T>& main, const Tensor<T>& mod) const {
    detail::check_same_shape(main, mod, "CrossSsmBlock");
    Tensor<T> out = fwd(main, mod);
    out = add(out, reverse(bwd(reverse(main, 0), reverse(mod, 0)), 0));
    return out;
  }

  void params(NamedParams<T>& out, const std::string& prefix) {
    fwd.params(out, prefix + ".fwd");
    if (!cfg.tied_directions) bwd.params(out, prefix + ".bwd");
  }
};

}  // namespace ssmflow
