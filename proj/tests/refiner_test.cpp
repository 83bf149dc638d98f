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

#include "gtest/gtest.h"
#include "ssmflow/refiner.hpp"
#include "testing.hpp"

namespace ssmflow {
namespace {

using testing::fd_check;
using testing::max_abs_diff;

RefinerConfig<double> tiny_cfg() {
  RefinerConfig<double> cfg;
  cfg.context_dim = 6;
  cfg.hidden_dim = 8;
  cfg.motion_dim = 4;
  cfg.lookup_radius = 1;
  cfg.iterations = 2;
  cfg.state_size = 4;
  cfg.expand = 2;
  cfg.conv_width = 3;
  return cfg;
}

// Independent bilinear interpolation with zero padding, for the oracle.
double bilerp_zero_pad(const Tensor<double>& cost, index_t i, index_t j, double x, double y) {
  const index_t Ht = cost.extent(2), Wt = cost.extent(3);
  const auto x0 = static_cast<index_t>(std::floor(x));
  const auto y0 = static_cast<index_t>(std::floor(y));
  const double fx = x - x0, fy = y - y0;
  auto at = [&](index_t yy, index_t xx) -> double {
    if (yy < 0 || yy >= Ht || xx < 0 || xx >= Wt) return 0.0;
    return cost.at({i, j, yy, xx});
  };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
         fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
}

TEST(LookupTest, ZeroFlowRadiusZeroReadsDiagonal) {
  Rng rng(1);
  const index_t H = 3, W = 4;
  Tensor<double> cost = Tensor<double>::uniform({H, W, H, W}, -1, 1, rng);
  Tensor<double> flow = Tensor<double>::zeros({H, W, 2});
  Tensor<double> feat = lookup_cost(cost, flow, 0);
  EXPECT_EQ(feat.shape(), (Shape{H, W, 1}));
  for (index_t i = 0; i < H; ++i) {
    for (index_t j = 0; j < W; ++j) {
      EXPECT_DOUBLE_EQ(feat.at({i, j, 0}), cost.at({i, j, i, j}));
    }
  }
}

TEST(LookupTest, IntegerFlowReadsExactValues) {
  Rng rng(2);
  const index_t H = 5, W = 5;
  Tensor<double> cost = Tensor<double>::uniform({H, W, H, W}, -1, 1, rng);
  Tensor<double> flow = Tensor<double>::zeros({H, W, 2});
  flow.at({2, 1, 0}) = 2.0;  // x + 2
  flow.at({2, 1, 1}) = 1.0;  // y + 1
  Tensor<double> feat = lookup_cost(cost, flow, 0);
  EXPECT_DOUBLE_EQ(feat.at({2, 1, 0}), cost.at({2, 1, 3, 3}));
}

TEST(LookupTest, FractionalFlowMatchesBilinearOracle) {
  Rng rng(3);
  const index_t H = 4, W = 5, r = 1;
  Tensor<double> cost = Tensor<double>::uniform({H, W, H, W}, -1, 1, rng);
  Tensor<double> flow = Tensor<double>::uniform({H, W, 2}, -1.3, 1.3, rng);
  Tensor<double> feat = lookup_cost(cost, flow, r);
  for (index_t i = 0; i < H; ++i) {
    for (index_t j = 0; j < W; ++j) {
      index_t ch = 0;
      for (index_t dy = -r; dy <= r; ++dy) {
        for (index_t dx = -r; dx <= r; ++dx, ++ch) {
          const double x = j + flow.at({i, j, 0}) + dx;
          const double y = i + flow.at({i, j, 1}) + dy;
          EXPECT_NEAR(feat.at({i, j, ch}), bilerp_zero_pad(cost, i, j, x, y), 1e-10);
        }
      }
    }
  }
}

TEST(LookupTest, GradientInCostAndFlow) {
  Rng rng(4);
  const index_t H = 3, W = 3;
  Tensor<double> cost = Tensor<double>::uniform({H, W, H, W}, -1, 1, rng);
  // fractional offsets keep the check away from the bilinear kinks
  Tensor<double> flow = Tensor<double>::uniform({H, W, 2}, 0.2, 0.45, rng);
  auto fn = [](const std::vector<Tensor<double>>& in) {
    Tensor<double> feat = lookup_cost(in[0], in[1], 1);
    Rng wrng(5);
    Tensor<double> w = Tensor<double>::uniform(feat.shape(), 0.1, 1.0, wrng);
    return sum_all(mul(feat, w));
  };
  EXPECT_TRUE(fd_check(fn, {cost, flow}).empty());
}

TEST(MotionEncoderTest, ZeroInputsZeroBiasesGiveZero) {
  Rng rng(6);
  MotionEncoder<double> enc = MotionEncoder<double>::make(9, 4, rng);
  NamedParams<double> p;
  enc.params(p, "m");
  for (auto& [name, t] : p) {
    if (name.find("bias") != std::string::npos) std::fill(t.data().begin(), t.data().end(), 0.0);
  }
  Tensor<double> out = enc(Tensor<double>::zeros({4, 4, 2}), Tensor<double>::zeros({4, 4, 9}));
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(MotionEncoderTest, OutputShapeAndGradients) {
  Rng rng(7);
  MotionEncoder<double> enc = MotionEncoder<double>::make(9, 8, rng);
  Tensor<double> flow = Tensor<double>::uniform({3, 4, 2}, -1, 1, rng);
  Tensor<double> costfeat = Tensor<double>::uniform({3, 4, 9}, -1, 1, rng);
  EXPECT_EQ(enc(flow, costfeat).shape(), (Shape{3, 4, 8}));
  auto fn = [&](const std::vector<Tensor<double>>& in) {
    Tensor<double> y = enc(in[0], in[1]);
    Rng wrng(8);
    Tensor<double> w = Tensor<double>::uniform(y.shape(), 0.1, 1.0, wrng);
    return sum_all(mul(y, w));
  };
  EXPECT_TRUE(fd_check(fn, {flow, costfeat}).empty());
}

TEST(AggregatorTest, IdenticalAlignedFeaturesPassThrough) {
  Rng rng(9);
  const index_t Dh = 6;
  AttentionAggregator<double> aga = AttentionAggregator<double>::make(Dh, Dh, Dh, rng);
  // Identity alignment: all three 1x1 convs become the identity map.
  for (auto* conv : {&aga.align_motion, &aga.align_context, &aga.align_hidden}) {
    std::fill(conv->kernel.data().begin(), conv->kernel.data().end(), 0.0);
    std::fill(conv->bias.data().begin(), conv->bias.data().end(), 0.0);
    for (index_t c = 0; c < Dh; ++c) conv->kernel.at({0, 0, c, c}) = 1.0;
  }
  Tensor<double> f = Tensor<double>::uniform({4, 4, Dh}, -1, 1, rng);
  auto [x, attn] = aga(f, f, f);
  EXPECT_LT(max_abs_diff(x, f), 1e-12);  // convex combination of equal inputs
}

TEST(AggregatorTest, AttentionSumsToOne) {
  Rng rng(10);
  AttentionAggregator<double> aga = AttentionAggregator<double>::make(4, 6, 8, rng);
  Tensor<double> m = Tensor<double>::uniform({5, 3, 4}, -1, 1, rng);
  Tensor<double> q = Tensor<double>::uniform({5, 3, 6}, -1, 1, rng);
  Tensor<double> h = Tensor<double>::uniform({5, 3, 8}, -1, 1, rng);
  auto [x, attn] = aga(m, q, h);
  EXPECT_EQ(attn.shape(), (Shape{5, 3, 3}));
  for (index_t i = 0; i < 5; ++i) {
    for (index_t j = 0; j < 3; ++j) {
      double s = 0;
      for (index_t k = 0; k < 3; ++k) s += attn.at({i, j, k});
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(AggregatorTest, SaturatedAttentionSelectsMotionSlot) {
  Rng rng(11);
  const index_t Dh = 6;
  AttentionAggregator<double> aga = AttentionAggregator<double>::make(4, 4, Dh, rng);
  aga.attn2.bias.at({0}) += 60.0;  // huge logit on the motion slot
  Tensor<double> m = Tensor<double>::uniform({3, 3, 4}, -1, 1, rng);
  Tensor<double> q = Tensor<double>::uniform({3, 3, 4}, -1, 1, rng);
  Tensor<double> h = Tensor<double>::uniform({3, 3, Dh}, -1, 1, rng);
  auto [x, attn] = aga(m, q, h);
  Tensor<double> aligned_m = aga.align_motion(m);
  EXPECT_LT(max_abs_diff(x, aligned_m), 1e-6);
}

TEST(AggregatorTest, ConcatBaselineZeroAndShape) {
  Rng rng(12);
  ConcatAggregator<double> cat = ConcatAggregator<double>::make(4, 6, 8, rng);
  NamedParams<double> p;
  cat.params(p, "c");
  for (auto& [name, t] : p) {
    if (name.find("bias") != std::string::npos) std::fill(t.data().begin(), t.data().end(), 0.0);
  }
  Tensor<double> y = cat(Tensor<double>::zeros({3, 3, 4}), Tensor<double>::zeros({3, 3, 6}),
                         Tensor<double>::zeros({3, 3, 8}));
  EXPECT_EQ(y.shape(), (Shape{3, 3, 8}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(AggregatorTest, SwappingAggregatorsChangesOnlyTheirBranches) {
  Rng rng(13);
  auto cfg = tiny_cfg();
  cfg.use_attention = true;
  Refiner<double> with_aga = Refiner<double>::make(cfg, rng);
  cfg.use_attention = false;
  Rng rng2(13);
  Refiner<double> with_cat = Refiner<double>::make(cfg, rng2);
  auto count = [](Refiner<double>& r) {
    NamedParams<double> p;
    r.params(p, "r");
    index_t aggregator = 0, rest = 0;
    for (auto& [name, t] : p) {
      if (name.find(".aga.attn") != std::string::npos || name.find(".concat.fuse") != std::string::npos) {
        aggregator += t.numel();
      } else {
        rest += t.numel();
      }
    }
    return std::pair{aggregator, rest};
  };
  auto [aga_branch, aga_rest] = count(with_aga);
  auto [cat_branch, cat_rest] = count(with_cat);
  EXPECT_EQ(aga_rest, cat_rest);  // alignment convs and everything else match
  const index_t Dh = tiny_cfg().hidden_dim;
  // attention branch: 3x3 convs 3Dh -> Dh/2 -> 3; fuse: 1x1 conv 3Dh -> Dh
  EXPECT_EQ(aga_branch, 9 * 3 * Dh * (Dh / 2) + Dh / 2 + 9 * (Dh / 2) * 3 + 3);
  EXPECT_EQ(cat_branch, 3 * Dh * Dh + Dh);
}

TEST(RefinerTest, ZeroHeadIsFixedPoint) {
  Rng rng(14);
  Refiner<double> r = Refiner<double>::make(tiny_cfg(), rng);
  std::fill(r.head2.kernel.data().begin(), r.head2.kernel.data().end(), 0.0);
  std::fill(r.head2.bias.data().begin(), r.head2.bias.data().end(), 0.0);
  const index_t H = 3, W = 3;
  Tensor<double> cost = Tensor<double>::uniform({H, W, H, W}, -1, 1, rng);
  Tensor<double> context = Tensor<double>::uniform({H, W, 6}, -1, 1, rng);
  Tensor<double> v0 = Tensor<double>::uniform({H, W, 2}, -0.4, 0.4, rng);
  auto flows = r.refine(v0, context, cost, 3);
  ASSERT_EQ(flows.size(), 4u);
  for (const auto& v : flows) EXPECT_EQ(v.data(), v0.data());
  // the hidden state still moves
  RefinementState<double> s = r.initial_state(v0);
  RefinementState<double> s1 = r.step(s, context, cost);
  double norm = 0;
  for (double v : s1.hidden.data()) norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST(RefinerTest, ZeroIterationsReturnInitialFlowBitExact) {
  Rng rng(15);
  Refiner<double> r = Refiner<double>::make(tiny_cfg(), rng);
  const index_t H = 3, W = 4;
  Tensor<double> cost = Tensor<double>::uniform({H, W, H, W}, -1, 1, rng);
  Tensor<double> context = Tensor<double>::uniform({H, W, 6}, -1, 1, rng);
  Tensor<double> v0 = Tensor<double>::uniform({H, W, 2}, -1, 1, rng);
  auto flows = r.refine(v0, context, cost, 0);
  ASSERT_EQ(flows.size(), 1u);
  EXPECT_TRUE(flows[0].same_storage(v0));
}

TEST(RefinerTest, StepsAreDeterministic) {
  Rng rng(16);
  Refiner<double> r = Refiner<double>::make(tiny_cfg(), rng);
  const index_t H = 4, W = 4;
  Tensor<double> cost = Tensor<double>::uniform({H, W, H, W}, -1, 1, rng);
  Tensor<double> context = Tensor<double>::uniform({H, W, 6}, -1, 1, rng);
  Tensor<double> v0 = Tensor<double>::uniform({H, W, 2}, -0.5, 0.5, rng);
  auto f1 = r.refine(v0, context, cost, 2);
  auto f2 = r.refine(v0, context, cost, 2);
  for (std::size_t i = 0; i < f1.size(); ++i) EXPECT_EQ(f1[i].data(), f2[i].data());
}

TEST(RefinerTest, AttentionNormalizedEveryIteration) {
  Rng rng(17);
  Refiner<double> r = Refiner<double>::make(tiny_cfg(), rng);
  const index_t H = 3, W = 3;
  Tensor<double> cost = Tensor<double>::uniform({H, W, H, W}, -1, 1, rng);
  Tensor<double> context = Tensor<double>::uniform({H, W, 6}, -1, 1, rng);
  RefinementState<double> s = r.initial_state(Tensor<double>::uniform({H, W, 2}, -0.5, 0.5, rng));
  for (int it = 0; it < 3; ++it) {
    Tensor<double> costfeat = lookup_cost(cost, s.flow, r.cfg.lookup_radius);
    Tensor<double> m = r.motion(s.flow, costfeat);
    auto [x, attn] = r.aggregate(m, context, s.hidden);
    for (index_t i = 0; i < H; ++i) {
      for (index_t j = 0; j < W; ++j) {
        double sum = 0;
        for (index_t k = 0; k < 3; ++k) sum += attn.at({i, j, k});
        EXPECT_NEAR(sum, 1.0, 1e-6);
      }
    }
    s = r.step(s, context, cost);
  }
}

TEST(RefinerTest, GradientThroughOneStep) {
  Rng rng(18);
  RefinerConfig<double> cfg = tiny_cfg();
  cfg.ssm_depth = 1;
  Refiner<double> r = Refiner<double>::make(cfg, rng);
  const index_t H = 3, W = 3;
  Tensor<double> cost = Tensor<double>::uniform({H, W, H, W}, -1, 1, rng);
  Tensor<double> context = Tensor<double>::uniform({H, W, 6}, -1, 1, rng);
  Tensor<double> v0 = Tensor<double>::uniform({H, W, 2}, 0.15, 0.4, rng);
  auto fn = [&](const std::vector<Tensor<double>>& in) {
    RefinementState<double> s = r.initial_state(in[2]);
    s = r.step(s, in[1], in[0]);
    Rng wrng(19);
    Tensor<double> w = Tensor<double>::uniform(s.flow.shape(), 0.1, 1.0, wrng);
    return sum_all(mul(s.flow, w));
  };
  EXPECT_TRUE(fd_check(fn, {cost, context, v0}, 1e-5, 5e-4, 1e-6).empty());
}

}  // namespace
}  // namespace ssmflow
