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
#include "ssmflow/blocks.hpp"
#include "testing.hpp"

namespace ssmflow {
namespace {

using testing::fd_check;
using testing::max_abs_diff;

BidirSsmConfig<double> tiny_self_cfg() {
  BidirSsmConfig<double> cfg;
  cfg.dim = 4;
  cfg.state_size = 4;
  cfg.expand = 2;
  cfg.conv_width = 3;
  return cfg;
}

CrossSsmConfig<double> tiny_cross_cfg() {
  CrossSsmConfig<double> cfg;
  cfg.dim = 4;
  cfg.state_size = 4;
  cfg.conv_width = 3;
  return cfg;
}

void zero_biases(NamedParams<double>& params) {
  for (auto& [name, t] : params) {
    if (name.find("bias") != std::string::npos) {
      std::fill(t.data().begin(), t.data().end(), 0.0);
    }
  }
}

TEST(SelfBlockTest, LengthOneIsSumOfDirections) {
  Rng rng(1);
  auto block = BidirSsmBlock<double>::make(tiny_self_cfg(), rng);
  Tensor<double> x = Tensor<double>::uniform({1, 4}, -1, 1, rng);
  Tensor<double> y = block(x);
  Tensor<double> expected = add(block.fwd(x), block.bwd(x));
  EXPECT_LT(max_abs_diff(y, expected), 1e-15);
}

TEST(SelfBlockTest, TiedDirectionsGiveReversalEquivariance) {
  Rng rng(2);
  auto cfg = tiny_self_cfg();
  cfg.tied_directions = true;
  auto block = BidirSsmBlock<double>::make(cfg, rng);
  Tensor<double> x = Tensor<double>::uniform({9, 4}, -1, 1, rng);
  Tensor<double> lhs = block(reverse(x, 0));
  Tensor<double> rhs = reverse(block(x), 0);
  EXPECT_EQ(lhs.data(), rhs.data());  // exact up to floating rounding: same op order
}

TEST(SelfBlockTest, SeparateDirectionsBreakEquivariance) {
  Rng rng(3);
  auto block = BidirSsmBlock<double>::make(tiny_self_cfg(), rng);
  Tensor<double> x = Tensor<double>::uniform({9, 4}, -1, 1, rng);
  EXPECT_GT(max_abs_diff(block(reverse(x, 0)), reverse(block(x), 0)), 1e-6);
}

TEST(SelfBlockTest, ZeroInputZeroBiasesGivesZeroOutput) {
  Rng rng(4);
  auto block = BidirSsmBlock<double>::make(tiny_self_cfg(), rng);
  NamedParams<double> params;
  block.params(params, "block");
  zero_biases(params);
  Tensor<double> y = block(Tensor<double>::zeros({6, 4}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(SelfBlockTest, ShapePreservedAndDeterministic) {
  Rng rng(5);
  auto block = BidirSsmBlock<double>::make(tiny_self_cfg(), rng);
  for (index_t L : {1, 4, 37}) {
    Tensor<double> x = Tensor<double>::uniform({L, 4}, -1, 1, rng);
    Tensor<double> y1 = block(x);
    Tensor<double> y2 = block(x);
    EXPECT_EQ(y1.shape(), x.shape());
    EXPECT_EQ(y1.data(), y2.data());
  }
}

TEST(SelfBlockTest, GradientThroughFullBlock) {
  Rng rng(6);
  BidirSsmConfig<double> cfg;
  cfg.dim = 4;
  cfg.state_size = 4;
  cfg.expand = 2;
  cfg.conv_width = 3;
  auto block = BidirSsmBlock<double>::make(cfg, rng);
  Tensor<double> x = Tensor<double>::uniform({6, 4}, -1, 1, rng);
  auto fn = [&](const std::vector<Tensor<double>>& in) {
    Rng wrng(9);
    Tensor<double> w = Tensor<double>::uniform({6, 4}, 0.1, 1.0, wrng);
    return sum_all(mul(block(in[0]), w));
  };
  EXPECT_TRUE(fd_check(fn, {x}).empty());
  // Parameters participate through shared storage, so perturbing the listed
  // tensors perturbs the block.
  auto fn_params = [&](const std::vector<Tensor<double>>& in) {
    (void)in;
    Rng wrng(9);
    Tensor<double> w = Tensor<double>::uniform({6, 4}, 0.1, 1.0, wrng);
    return sum_all(mul(block(x), w));
  };
  x.set_requires_grad(false);
  EXPECT_TRUE(fd_check(fn_params, {block.fwd.in_proj.weight, block.fwd.conv.kernel,
                                   block.fwd.proj_delta.bias, block.bwd.A, block.bwd.out_proj.weight})
                  .empty());
}

TEST(CrossBlockTest, SecondStreamModulatesOutput) {
  Rng rng(7);
  auto block = CrossSsmBlock<double>::make(tiny_cross_cfg(), rng);
  Tensor<double> f1 = Tensor<double>::uniform({8, 4}, -1, 1, rng);
  Tensor<double> f2 = Tensor<double>::uniform({8, 4}, -1, 1, rng);
  Tensor<double> y0 = block(f1, f2);
  Tensor<double> f2p = f2.clone();
  f2p.at({3, 1}) += 0.25;
  Tensor<double> y1 = block(f1, f2p);
  EXPECT_GT(max_abs_diff(y0, y1), 1e-9);  // scan params depend on the second stream
}

TEST(CrossBlockTest, NullModulationMatchesRestrictedProjection) {
  Rng rng(8);
  auto block = CrossSsmBlock<double>::make(tiny_cross_cfg(), rng);
  std::fill(block.fwd.mod_proj.bias.data().begin(), block.fwd.mod_proj.bias.data().end(), 0.0);
  std::fill(block.bwd.mod_proj.bias.data().begin(), block.bwd.mod_proj.bias.data().end(), 0.0);
  Tensor<double> f1 = Tensor<double>::uniform({8, 4}, -1, 1, rng);
  Tensor<double> zero = Tensor<double>::zeros({8, 4});
  Tensor<double> y = block(f1, zero);

  // With x_mod = 0 the joint projection reduces to its x_conv rows.
  auto restricted_dir = [&](const detail::CrossDirection<double>& dir, const Tensor<double>& main) {
    const index_t D = 4, N = 4;
    Tensor<double> xc = silu(dir.conv(main));
    Tensor<double> wTop = Tensor<double>::zeros({D, D + 2 * N});
    for (index_t i = 0; i < D; ++i) {
      for (index_t j = 0; j < D + 2 * N; ++j) wTop.at({i, j}) = dir.joint.weight.at({i, j});
    }
    Tensor<double> g = add(matmul(xc, wTop), dir.joint.bias);
    Tensor<double> delta = softplus(slice_last(g, 0, D));
    Tensor<double> B = slice_last(g, D, D + N);
    Tensor<double> C = slice_last(g, D + N, D + 2 * N);
    auto [abar, bbar] = zoh_discretize(delta, dir.A, B);
    return dir.out_proj(selective_scan_seq(abar, bbar, C, xc));
  };
  Tensor<double> expected = add(restricted_dir(block.fwd, f1),
                                reverse(restricted_dir(block.bwd, reverse(f1, 0)), 0));
  EXPECT_LT(max_abs_diff(y, expected), 1e-12);
}

TEST(CrossBlockTest, ShapeContractAcrossLengths) {
  Rng rng(9);
  auto block = CrossSsmBlock<double>::make(tiny_cross_cfg(), rng);
  for (index_t L : {4, 37, 64}) {
    Tensor<double> f1 = Tensor<double>::uniform({L, 4}, -1, 1, rng);
    Tensor<double> f2 = Tensor<double>::uniform({L, 4}, -1, 1, rng);
    EXPECT_EQ(block(f1, f2).shape(), (Shape{L, 4}));
  }
  Tensor<double> f1 = Tensor<double>::zeros({4, 4});
  Tensor<double> f2 = Tensor<double>::zeros({5, 4});
  EXPECT_THROW(block(f1, f2), ShapeError);
}

TEST(CrossBlockTest, StreamsPlayAsymmetricRoles) {
  Rng rng(10);
  auto block = CrossSsmBlock<double>::make(tiny_cross_cfg(), rng);
  Tensor<double> f1 = Tensor<double>::uniform({8, 4}, -1, 1, rng);
  Tensor<double> f2 = Tensor<double>::uniform({8, 4}, -1, 1, rng);
  EXPECT_GT(max_abs_diff(block(f1, f2), block(f2, f1)), 1e-6);
}

TEST(CrossBlockTest, GradientThroughFullBlock) {
  Rng rng(11);
  auto block = CrossSsmBlock<double>::make(tiny_cross_cfg(), rng);
  Tensor<double> f1 = Tensor<double>::uniform({6, 4}, -1, 1, rng);
  Tensor<double> f2 = Tensor<double>::uniform({6, 4}, -1, 1, rng);
  auto fn = [&](const std::vector<Tensor<double>>& in) {
    Rng wrng(13);
    Tensor<double> w = Tensor<double>::uniform({6, 4}, 0.1, 1.0, wrng);
    return sum_all(mul(block(in[0], in[1]), w));
  };
  EXPECT_TRUE(fd_check(fn, {f1, f2}).empty());
}

}  // namespace
}  // namespace ssmflow
