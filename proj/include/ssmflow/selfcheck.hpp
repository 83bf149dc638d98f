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

#include <filesystem>

#include "ssmflow/bench.hpp"
#include "ssmflow/flowio.hpp"
#include "ssmflow/gradcheck.hpp"
#include "ssmflow/metrics.hpp"
#include "ssmflow/synthetic.hpp"
#include "ssmflow/train.hpp"

// Compact self-test registry: one check per operation, asserting its example
// values and identities. Runs in seconds; training-scale and wall-clock
// checks live in the acceptance suite instead.

namespace ssmflow {

struct SelfCheck {
  std::string name;
  std::function<void()> run;  // throws on failure
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error("check failed: " + msg);
}

inline void require_near(double a, double b, double tol, const std::string& msg) {
  if (!(std::abs(a - b) <= tol)) {
    throw Error("check failed: " + msg + " (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

template <typename T>
double diff_max(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
  }
  return m;
}

}  // namespace detail

inline std::vector<SelfCheck> all_self_checks() {
  using detail::diff_max;
  using detail::require;
  using detail::require_near;
  std::vector<SelfCheck> checks;
  auto add_check = [&](std::string name, std::function<void()> fn) {
    checks.push_back({std::move(name), std::move(fn)});
  };

  // ---- tensor core -------------------------------------------------------
  add_check("matmul.examples", [] {
    Tensor<double> eye = Tensor<double>::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
    Rng rng(1);
    Tensor<double> b = Tensor<double>::uniform({3, 4}, -1, 1, rng);
    require(diff_max(matmul(eye, b), b) == 0.0, "identity matmul");
    Tensor<double> a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
    Tensor<double> v = Tensor<double>::from({2, 1}, {1, 1});
    Tensor<double> y = matmul(a, v);
    require(y.at({0, 0}) == 3.0 && y.at({1, 0}) == 7.0, "hand-evaluated matmul");
    Tensor<double> z = matmul(Tensor<double>::zeros({2, 3}), b);
    for (double w : z.data()) require(w == 0.0, "zero matmul");
  });
  add_check("softmax.examples", [] {
    Tensor<double> y = softmax(Tensor<double>::zeros({3}), {0});
    for (double v : y.data()) require_near(v, 1.0 / 3, 1e-12, "uniform softmax");
    Tensor<double> x = Tensor<double>::from({3}, {std::log(1.0), std::log(2.0), std::log(3.0)});
    Tensor<double> s = softmax(x, {0});
    require_near(s.at({0}), 1.0 / 6, 1e-12, "softmax 1/6");
    require_near(s.at({2}), 3.0 / 6, 1e-12, "softmax 3/6");
    Tensor<double> shifted = softmax(add(x, Tensor<double>::scalar(13.0)), {0});
    require(diff_max(s, shifted) < 1e-12, "shift invariance");
  });
  add_check("activations.examples", [] {
    require(silu(Tensor<double>::zeros({1})).item() == 0.0, "silu(0)");
    require(gelu(Tensor<double>::zeros({1})).item() == 0.0, "gelu(0)");
    require_near(softplus(Tensor<double>::zeros({1})).item(), 0.693147, 1e-6, "softplus(0)=ln2");
  });
  add_check("conv1d.causality", [] {
    Rng rng(2);
    Tensor<double> x = Tensor<double>::uniform({8, 2}, -1, 1, rng);
    Tensor<double> k = Tensor<double>::zeros({2, 4});
    for (index_t d = 0; d < 2; ++d) k.at({d, 3}) = 1.0;
    Tensor<double> y = conv1d_depthwise_causal(x, k, Tensor<double>::zeros({2}));
    require(diff_max(y, x) == 0.0, "current-tap kernel is identity");
    Tensor<double> impulse = Tensor<double>::zeros({5, 1});
    impulse.at({0, 0}) = 1.0;
    Tensor<double> kk = Tensor<double>::from({1, 3}, {0.3, 0.5, 0.7});
    Tensor<double> t = conv1d_depthwise_causal(impulse, kk, Tensor<double>::zeros({1}));
    require(t.at({0, 0}) == 0.7 && t.at({1, 0}) == 0.5 && t.at({2, 0}) == 0.3, "impulse reversal");
    Tensor<double> kr = Tensor<double>::uniform({2, 3}, -1, 1, rng);
    Tensor<double> y0 = conv1d_depthwise_causal(x, kr, Tensor<double>::zeros({2}));
    Tensor<double> x2 = x.clone();
    x2.at({5, 0}) += 2.0;
    Tensor<double> y1 = conv1d_depthwise_causal(x2, kr, Tensor<double>::zeros({2}));
    for (index_t tix = 0; tix < 5; ++tix) {
      for (index_t d = 0; d < 2; ++d) require(y0.at({tix, d}) == y1.at({tix, d}), "strict causality");
    }
  });
  add_check("conv2d.examples", [] {
    Tensor<double> x = Tensor<double>::filled({5, 5, 1}, 1.0);
    Tensor<double> k = Tensor<double>::filled({3, 3, 1, 1}, 1.0);
    Tensor<double> y = conv2d(x, k, Tensor<double>::zeros({1}), 1, 1);
    require(y.at({2, 2, 0}) == 9.0, "interior ones sum");
    Rng rng(3);
    Tensor<double> x8 = Tensor<double>::uniform({8, 8, 1}, -1, 1, rng);
    Tensor<double> k2 = Tensor<double>::uniform({2, 2, 1, 3}, -1, 1, rng);
    require(conv2d(x8, k2, Tensor<double>::zeros({3}), 2, 0).shape() == (Shape{4, 4, 3}),
            "stride-2 shape");
    bool threw = false;
    try {
      conv2d(Tensor<double>::zeros({2, 2, 1}), Tensor<double>::zeros({5, 5, 1, 1}),
             Tensor<double>::zeros({1}), 1, 0);
    } catch (const ShapeError&) {
      threw = true;
    }
    require(threw, "non-positive output extent rejected");
  });
  add_check("reverse.examples", [] {
    Tensor<double> y = reverse(Tensor<double>::from({3}, {1, 2, 3}), 0);
    require(y.at({0}) == 3 && y.at({2}) == 1, "reverse order");
    Rng rng(4);
    Tensor<double> r = Tensor<double>::uniform({3, 4}, -1, 1, rng);
    require(diff_max(reverse(reverse(r, 1), 1), r) == 0.0, "involution");
  });
  add_check("backward.examples", [] {
    Rng rng(5);
    Tensor<double> x = Tensor<double>::uniform({4}, -1, 1, rng);
    x.set_requires_grad(true);
    {
      GradTape<double> tape;
      tape.backward(sum_all(x));
      for (double g : x.grad()) require(g == 1.0, "grad of sum is ones");
      x.zero_grad();
    }
    {
      GradTape<double> tape;
      tape.backward(sum_all(mul(x, x)));
      for (index_t i = 0; i < 4; ++i) {
        require_near(x.grad()[i], 2 * x.at({i}), 1e-12, "grad of sum of squares");
      }
      x.zero_grad();
    }
    bool threw = false;
    try {
      GradTape<double> tape;
      tape.backward(mul(x, x));
    } catch (const ValueError&) {
      threw = true;
    }
    require(threw, "non-scalar loss rejected");
  });
  add_check("adamw.examples", [] {
    Tensor<double> p = Tensor<double>::scalar(0.0);
    p.set_requires_grad(true);
    p.grad()[0] = 1.0;
    NamedParams<double> params{{"p", p}};
    AdamW<double> opt(0.01);
    opt.step(params);
    require_near(p.item(), -0.01, 1e-8, "first step moves by lr");
    Tensor<double> q = Tensor<double>::scalar(2.0);
    q.set_requires_grad(true);
    NamedParams<double> qp{{"q", q}};
    AdamW<double> opt2(0.1, 0.9, 0.999, 1e-8, 0.5);
    opt2.step(qp);
    require_near(q.item(), 2.0 * (1 - 0.1 * 0.5), 1e-12, "decoupled decay");
  });

  // ---- ssm scan ----------------------------------------------------------
  add_check("discretize.examples", [] {
    Tensor<double> A = Tensor<double>::from({1}, {-1.0});
    Tensor<double> B = Tensor<double>::from({1}, {1.0});
    DiscreteSSM<double> d = discretize(A, B, std::log(2.0));
    require_near(d.abar.item(), 0.5, 1e-15, "abar");
    require_near(d.bbar.item(), 0.5, 1e-15, "bbar");
    DiscreteSSM<double> tiny = discretize(A, B, 1e-9);
    require(std::isfinite(tiny.bbar.item()), "series branch finite");
    require_near(tiny.bbar.item(), 1e-9, 1e-15, "series limit");
    bool threw = false;
    try {
      discretize(A, B, 0.0);
    } catch (const ValueError&) {
      threw = true;
    }
    require(threw, "delta <= 0 rejected");
  });
  add_check("scan_sequential.examples", [] {
    DiscreteSSM<double> d{Tensor<double>::from({1}, {0.5}), Tensor<double>::from({1}, {0.5})};
    Tensor<double> C = Tensor<double>::from({1}, {1.0});
    Tensor<double> y = scan_sequential(make_scan_params(d, C, 3, 1), Tensor<double>::filled({3, 1}, 1.0));
    require_near(y.at({0, 0}), 0.5, 1e-15, "y0");
    require_near(y.at({1, 0}), 0.75, 1e-15, "y1");
    require_near(y.at({2, 0}), 0.875, 1e-15, "y2");
  });
  add_check("kernel_form.examples", [] {
    DiscreteSSM<double> d{Tensor<double>::from({1}, {0.5}), Tensor<double>::from({1}, {0.5})};
    Tensor<double> C = Tensor<double>::from({1}, {1.0});
    Tensor<double> K = kernel_form(d, C, 3);
    require(K.at({0}) == 0.5 && K.at({1}) == 0.25 && K.at({2}) == 0.125, "kernel values");
    Tensor<double> y = apply_kernel(K, Tensor<double>::filled({3, 1}, 1.0));
    require_near(y.at({2, 0}), 0.875, 1e-12, "kernel equals scan");
  });
  add_check("scan.three_way_equivalence", [] {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
      const index_t N = 1 + rng.index(8), D = 1 + rng.index(4), L = 1 + rng.index(32);
      Tensor<double> A = Tensor<double>::uniform({N}, -2, -0.1, rng);
      Tensor<double> B = Tensor<double>::uniform({N}, -1, 1, rng);
      Tensor<double> C = Tensor<double>::uniform({N}, -1, 1, rng);
      DiscreteSSM<double> d = discretize(A, B, rng.uniform(0.1, 1.0));
      Tensor<double> x = Tensor<double>::uniform({L, D}, -1, 1, rng);
      ScanParams<double> p = make_scan_params(d, C, L, D);
      Tensor<double> ys = scan_sequential(p, x);
      require(diff_max(ys, scan_parallel(p, x)) < 1e-10, "parallel equivalence");
      require(diff_max(ys, apply_kernel(kernel_form(d, C, L), x)) < 1e-10, "kernel equivalence");
    }
  });
  add_check("selective_params.examples", [] {
    Rng rng(7);
    Tensor<double> x = Tensor<double>::uniform({6, 3}, -3, 3, rng);
    Linear<double> sb = Linear<double>::make(3, 4, rng);
    Linear<double> sc = Linear<double>::make(3, 4, rng);
    Linear<double> sd = Linear<double>::make(3, 3, rng);
    SelectiveParams<double> sp =
        selective_params(x, sb.weight, sb.bias, sc.weight, sc.bias, sd.weight, sd.bias);
    for (double v : sp.delta.data()) require(v > 0.0, "delta positive");
    bool threw = false;
    try {
      kernel_form(make_scan_params(sp, init_state_matrix<double>(3, 4)), 6);
    } catch (const ContractError&) {
      threw = true;
    }
    require(threw, "kernel form rejects selective params");
  });
  add_check("affine_map.associativity", [] {
    Rng rng(8);
    for (int t = 0; t < 200; ++t) {
      AffineMap<double> u{rng.uniform(-1, 1), rng.uniform(-1, 1)};
      AffineMap<double> v{rng.uniform(-1, 1), rng.uniform(-1, 1)};
      AffineMap<double> w{rng.uniform(-1, 1), rng.uniform(-1, 1)};
      auto l = affine_then(affine_then(u, v), w);
      auto r = affine_then(u, affine_then(v, w));
      require_near(l.a, r.a, 1e-15, "assoc a");
      require_near(l.b, r.b, 1e-15, "assoc b");
    }
  });

  // ---- blocks ------------------------------------------------------------
  add_check("self_block.identities", [] {
    Rng rng(9);
    BidirSsmConfig<double> cfg;
    cfg.dim = 4;
    cfg.state_size = 4;
    cfg.expand = 2;
    cfg.conv_width = 3;
    cfg.tied_directions = true;
    auto block = BidirSsmBlock<double>::make(cfg, rng);
    Tensor<double> x = Tensor<double>::uniform({7, 4}, -1, 1, rng);
    require(diff_max(block(reverse(x, 0)), reverse(block(x), 0)) == 0.0, "tied reversal equivariance");
    auto b2 = BidirSsmBlock<double>::make(cfg, rng);
    NamedParams<double> p;
    b2.params(p, "b");
    for (auto& [n, t] : p) {
      if (n.find("bias") != std::string::npos) std::fill(t.data().begin(), t.data().end(), 0.0);
    }
    Tensor<double> z = b2(Tensor<double>::zeros({5, 4}));
    for (double v : z.data()) require(v == 0.0, "zero in, zero out");
  });
  add_check("cross_block.identities", [] {
    Rng rng(10);
    CrossSsmConfig<double> cfg;
    cfg.dim = 4;
    cfg.state_size = 4;
    cfg.conv_width = 3;
    auto block = CrossSsmBlock<double>::make(cfg, rng);
    Tensor<double> f1 = Tensor<double>::uniform({6, 4}, -1, 1, rng);
    Tensor<double> f2 = Tensor<double>::uniform({6, 4}, -1, 1, rng);
    Tensor<double> base = block(f1, f2);
    Tensor<double> f2p = f2.clone();
    f2p.at({2, 1}) += 0.3;
    require(diff_max(base, block(f1, f2p)) > 1e-9, "second stream modulates");
    require(diff_max(block(f1, f2), block(f2, f1)) > 1e-9, "asymmetric roles");
    require(base.shape() == f1.shape(), "shape preserved");
  });

  // ---- enhancer ----------------------------------------------------------
  add_check("positional.examples", [] {
    Rng rng(11);
    Tensor<double> f = Tensor<double>::uniform({3, 4, 8}, -1, 1, rng);
    PositionalEmbedding<double> zero;
    zero.emb = Tensor<double>::zeros({3, 4, 8});
    require(diff_max(add_positional(f, zero), f) == 0.0, "zero embedding");
    PositionalEmbedding<double> pos = PositionalEmbedding<double>::make(3, 4, 8, rng);
    require(diff_max(add_positional(Tensor<double>::zeros({3, 4, 8}), pos), pos.emb) == 0.0,
            "zero features");
  });
  add_check("flatten.roundtrip", [] {
    Tensor<double> f = Tensor<double>::from({2, 2, 1}, {1, 2, 3, 4});
    Tensor<double> flat = flatten_2d(f);
    require(flat.at({0, 0}) == 1 && flat.at({3, 0}) == 4, "row-major order");
    Rng rng(12);
    Tensor<double> r = Tensor<double>::uniform({3, 5, 2}, -1, 1, rng);
    require(diff_max(unflatten_2d(flatten_2d(r), 3, 5), r) == 0.0, "roundtrip");
  });
  add_check("enhancer.identities", [] {
    Rng rng(13);
    EnhancerConfig<double> cfg;
    cfg.dim = 8;
    cfg.depth = 0;
    cfg.state_size = 4;
    cfg.conv_width = 3;
    cfg.mlp_ratio = 2;
    Enhancer<double> empty = Enhancer<double>::make(cfg, rng);
    Tensor<double> f1 = Tensor<double>::uniform({2, 3, 8}, -1, 1, rng);
    Tensor<double> f2 = Tensor<double>::uniform({2, 3, 8}, -1, 1, rng);
    auto [q0, v0] = empty(f1, f2);
    require(diff_max(q0, f1) == 0.0, "depth-0 identity");
    cfg.depth = 2;
    cfg.tied_cross = true;
    Enhancer<double> e = Enhancer<double>::make(cfg, rng);
    auto [q, v] = e(f1, f2);
    auto [qs, vs] = e(f2, f1);
    require(diff_max(qs, v) == 0.0 && diff_max(vs, q) == 0.0, "tied-cross swap symmetry");
  });

  // ---- matching ----------------------------------------------------------
  add_check("cost_volume.examples", [] {
    const index_t H = 3, W = 3, D = 9;
    Tensor<double> f = Tensor<double>::zeros({H, W, D});
    for (index_t i = 0; i < H; ++i) {
      for (index_t j = 0; j < W; ++j) f.at({i, j, i * W + j}) = 1.0;
    }
    Tensor<double> cost = build_cost_volume(f, f);
    require_near(cost.at({1, 1, 1, 1}), 1.0 / 3.0, 1e-15, "diagonal 1/sqrt(D)");
    require(cost.at({1, 1, 0, 0}) == 0.0, "off-diagonal zero");
    bool threw = false;
    try {
      Tensor<double> big = Tensor<double>::zeros({8, 8, 2});
      build_cost_volume(big, big, 63);
    } catch (const CapacityError&) {
      threw = true;
    }
    require(threw, "capacity guard");
  });
  add_check("matching_distribution.examples", [] {
    Tensor<double> cost = Tensor<double>::filled({2, 3, 2, 3}, 0.7);
    Tensor<double> m = matching_distribution(cost);
    for (double v : m.data()) require_near(v, 1.0 / 6, 1e-12, "uniform distribution");
    Rng rng(14);
    Tensor<double> rc = Tensor<double>::uniform({2, 3, 2, 3}, -2, 2, rng);
    Tensor<double> mr = matching_distribution(rc);
    for (index_t i = 0; i < 2; ++i) {
      for (index_t j = 0; j < 3; ++j) {
        double s = 0;
        for (index_t k = 0; k < 2; ++k) {
          for (index_t l = 0; l < 3; ++l) s += mr.at({i, j, k, l});
        }
        require_near(s, 1.0, 1e-6, "row normalization");
      }
    }
  });
  add_check("initial_flow.examples", [] {
    const index_t H = 3, W = 4;
    Tensor<double> m = Tensor<double>::zeros({H, W, H, W});
    for (index_t i = 0; i < H; ++i) {
      for (index_t j = 0; j < W; ++j) m.at({i, j, i, j}) = 1.0;
    }
    Tensor<double> v = initial_flow(m, coordinate_grid<double>(H, W));
    for (double w : v.data()) require(w == 0.0, "self-match zero flow");
    Tensor<double> u = Tensor<double>::filled({H, W, H, W}, 1.0 / (H * W));
    Tensor<double> vu = initial_flow(u, coordinate_grid<double>(H, W));
    require_near(vu.at({0, 0, 0}), (W - 1) / 2.0, 1e-12, "uniform gives centroid");
  });
  add_check("global_match.sharp_self_match", [] {
    const index_t H = 4, W = 4;
    const double s = std::sqrt(50.0 * std::sqrt(double(H * W)));
    Tensor<double> f = Tensor<double>::zeros({H, W, H * W});
    for (index_t i = 0; i < H; ++i) {
      for (index_t j = 0; j < W; ++j) f.at({i, j, i * W + j}) = s;
    }
    GlobalMatch<double> gm = global_match(f, f);
    for (double v : gm.flow.data()) require(std::abs(v) < 1e-3, "sharpened self-match near zero");
  });

  // ---- refiner -----------------------------------------------------------
  add_check("lookup_cost.examples", [] {
    Rng rng(15);
    const index_t H = 3, W = 4;
    Tensor<double> cost = Tensor<double>::uniform({H, W, H, W}, -1, 1, rng);
    Tensor<double> zero_flow = Tensor<double>::zeros({H, W, 2});
    Tensor<double> f0 = lookup_cost(cost, zero_flow, 0);
    for (index_t i = 0; i < H; ++i) {
      for (index_t j = 0; j < W; ++j) {
        require(f0.at({i, j, 0}) == cost.at({i, j, i, j}), "diagonal at zero flow");
      }
    }
  });
  add_check("aggregator.identities", [] {
    Rng rng(16);
    const index_t Dh = 6;
    AttentionAggregator<double> aga = AttentionAggregator<double>::make(Dh, Dh, Dh, rng);
    for (auto* conv : {&aga.align_motion, &aga.align_context, &aga.align_hidden}) {
      std::fill(conv->kernel.data().begin(), conv->kernel.data().end(), 0.0);
      std::fill(conv->bias.data().begin(), conv->bias.data().end(), 0.0);
      for (index_t c = 0; c < Dh; ++c) conv->kernel.at({0, 0, c, c}) = 1.0;
    }
    Tensor<double> f = Tensor<double>::uniform({3, 3, Dh}, -1, 1, rng);
    auto [x, attn] = aga(f, f, f);
    require(diff_max(x, f) < 1e-12, "convexity identity");
    for (index_t i = 0; i < 3; ++i) {
      for (index_t j = 0; j < 3; ++j) {
        double s = 0;
        for (index_t k = 0; k < 3; ++k) s += attn.at({i, j, k});
        require_near(s, 1.0, 1e-6, "attention sums to one");
      }
    }
    aga.attn2.bias.at({0}) += 60.0;
    auto [xm, attn2] = aga(f, scale(f, 0.5), scale(f, -1.0));
    require(diff_max(xm, f) < 1e-6, "saturated attention selects motion");
  });
  add_check("refiner.fixed_points", [] {
    Rng rng(17);
    RefinerConfig<double> cfg;
    cfg.context_dim = 6;
    cfg.hidden_dim = 8;
    cfg.motion_dim = 4;
    cfg.lookup_radius = 1;
    cfg.state_size = 4;
    cfg.conv_width = 3;
    Refiner<double> r = Refiner<double>::make(cfg, rng);
    Tensor<double> cost = Tensor<double>::uniform({3, 3, 3, 3}, -1, 1, rng);
    Tensor<double> ctx = Tensor<double>::uniform({3, 3, 6}, -1, 1, rng);
    Tensor<double> v0 = Tensor<double>::uniform({3, 3, 2}, -0.4, 0.4, rng);
    auto flows = r.refine(v0, ctx, cost, 0);
    require(flows.size() == 1 && flows[0].same_storage(v0), "zero iterations return initial");
    std::fill(r.head2.kernel.data().begin(), r.head2.kernel.data().end(), 0.0);
    std::fill(r.head2.bias.data().begin(), r.head2.bias.data().end(), 0.0);
    auto fixed = r.refine(v0, ctx, cost, 2);
    require(fixed.size() == 3, "iteration list length");
    for (const auto& f : fixed) require(diff_max(f, v0) == 0.0, "zero-head fixed point");
  });

  // ---- pipeline ----------------------------------------------------------
  add_check("sequence_loss.examples", [] {
    Rng rng(18);
    Tensor<double> gt = Tensor<double>::uniform({4, 4, 2}, -2, 2, rng);
    std::vector<Tensor<double>> exact{gt.clone(), gt.clone()};
    require(sequence_loss(exact, gt, 0.8).item() == 0.0, "exact predictions");
    Tensor<double> off = gt.clone();
    for (index_t i = 0; i < 4; ++i) {
      for (index_t j = 0; j < 4; ++j) off.at({i, j, 0}) += 1.0;
    }
    std::vector<Tensor<double>> flows{gt.clone(), off};
    require_near(sequence_loss(flows, gt, 0.8).item(), 1.0, 1e-12, "unit offset");
  });
  add_check("weight_store.roundtrip", [] {
    ModelConfig cfg;
    cfg.dim = 8;
    cfg.downsample = 4;
    cfg.blocks = 1;
    cfg.state_size = 4;
    cfg.conv_width = 3;
    cfg.mlp_ratio = 2;
    cfg.iterations = 1;
    cfg.hidden_dim = 8;
    cfg.motion_dim = 4;
    cfg.lookup_radius = 1;
    cfg.pos_height = 4;
    cfg.pos_width = 4;
    Model<float> m = Model<float>::make(cfg, 3);
    const std::string path =
        (std::filesystem::temp_directory_path() / "ssmflow_selfcheck.ssmf").string();
    save_weights(m.to_store(), path);
    WeightStore back = load_weights(path);
    Model<float> fresh = Model<float>::make(back.config(), 99);
    fresh.load_store(back);
    WeightStore again = fresh.to_store();
    WeightStore orig = m.to_store();
    for (std::size_t i = 0; i < orig.tensors.size(); ++i) {
      require(orig.tensors[i].second.data() == again.tensors[i].second.data(), "bit-exact weights");
    }
    std::filesystem::remove(path);
  });

  // ---- metrics / io ------------------------------------------------------
  add_check("epe.examples", [] {
    Tensor<double> gt = Tensor<double>::zeros({4, 4, 2});
    require(epe(gt, gt) == 0.0, "identical flows");
    Tensor<double> pred = gt.clone();
    for (index_t i = 0; i < 4; ++i) {
      for (index_t j = 0; j < 4; ++j) {
        pred.at({i, j, 0}) = 3.0;
        pred.at({i, j, 1}) = 4.0;
      }
    }
    require(epe(pred, gt) == 5.0, "3-4-5 offset");
  });
  add_check("f1_all.examples", [] {
    auto constant = [](double u) {
      Tensor<double> f = Tensor<double>::zeros({4, 4, 2});
      for (index_t i = 0; i < 4; ++i) {
        for (index_t j = 0; j < 4; ++j) f.at({i, j, 0}) = u;
      }
      return f;
    };
    require(f1_all(constant(104), constant(100)) == 0.0, "relative threshold saves");
    require(f1_all(constant(14), constant(10)) == 100.0, "both thresholds exceeded");
    require(f1_all(constant(104), constant(100), {}, true) == 100.0, "or-variant flags");
  });
  add_check("s40.examples", [] {
    Tensor<double> gt = Tensor<double>::zeros({2, 2, 2});
    require(!s40(gt, gt).has_value(), "empty selection");
    gt.at({0, 0, 0}) = 50.0;
    Tensor<double> pred = gt.clone();
    pred.at({0, 0, 1}) = 2.0;
    auto v = s40(pred, gt);
    require(v.has_value() && *v == 2.0, "single qualifying pixel");
  });
  add_check("flo.byte_oracle", [] {
    const unsigned char bytes[28] = {'P',  'I',  'E',  'H',  0x02, 0x00, 0x00, 0x00, 0x01, 0x00,
                                     0x00, 0x00, 0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40,
                                     0x00, 0x00, 0x40, 0x40, 0x00, 0x00, 0x80, 0x40};
    const std::string path = (std::filesystem::temp_directory_path() / "ssmflow_oracle.flo").string();
    {
      std::ofstream f(path, std::ios::binary);
      f.write(reinterpret_cast<const char*>(bytes), 28);
    }
    Tensor<float> flow = read_flo<float>(path);
    require(flow.shape() == (Shape{1, 2, 2}), "oracle shape");
    require(flow.at({0, 0, 0}) == 1.0f && flow.at({0, 1, 1}) == 4.0f, "oracle values");
    write_flo(flow, path);
    std::ifstream f(path, std::ios::binary);
    std::vector<unsigned char> written((std::istreambuf_iterator<char>(f)),
                                       std::istreambuf_iterator<char>());
    require(written.size() == 28 && std::memcmp(written.data(), bytes, 28) == 0, "byte-exact write");
    std::filesystem::remove(path);
  });
  add_check("flow_color.examples", [] {
    Image white = flow_to_color(Tensor<double>::zeros({3, 3, 2}));
    for (std::uint8_t v : white.rgb) require(v == 255, "zero flow is white");
  });
  add_check("synthetic.examples", [] {
    FlowSample<double> still = make_translation_sample<double>(7, 24, 0.0, 0.0);
    require(diff_max(still.img1, still.img2) == 0.0, "zero displacement pair identical");
    FlowSample<double> shifted = make_translation_sample<double>(8, 24, 2.0, 0.0);
    double derr = 0;
    for (index_t i = 0; i < 24; ++i) {
      for (index_t j = 2; j < 24; ++j) {
        for (index_t c = 0; c < 3; ++c) {
          derr = std::max(derr, std::abs(shifted.img2.at({i, j, c}) - shifted.img1.at({i, j - 2, c})));
        }
      }
    }
    require(derr < 1e-12, "integer shift moves texture");
    Tensor<double> rewarped = backward_warp(shifted.img2, shifted.gt);
    double err_sum = 0;
    index_t n = 0;
    for (index_t i = 0; i < 24; ++i) {
      for (index_t j = 0; j < 24; ++j) {
        if (shifted.occluded.at({i, j}) > 0.5) continue;
        for (index_t c = 0; c < 3; ++c) {
          err_sum += std::abs(rewarped.at({i, j, c}) - shifted.img1.at({i, j, c}));
          ++n;
        }
      }
    }
    require(err_sum / n < 1e-3, "warp consistency");
  });
  add_check("gradients.spot_checks", [] {
    for (const auto& r : gradcheck_blocks()) {
      require(r.passed, r.name + ": " + r.detail);
    }
  });

  return checks;
}

}  // namespace ssmflow
