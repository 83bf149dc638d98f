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

#include <cmath>

#include "gtest/gtest.h"
#include "ssmflow/nn.hpp"
#include "ssmflow/ssm.hpp"
#include "testing.hpp"

namespace ssmflow {
namespace {

using testing::fd_check;
using testing::max_abs_diff;

struct RandomStaticInstance {
  DiscreteSSM<double> disc;
  Tensor<double> C;
  Tensor<double> x;
};

RandomStaticInstance random_static(index_t N, index_t D, index_t L, Rng& rng) {
  Tensor<double> A = Tensor<double>::uniform({N}, -2.0, -0.1, rng);
  Tensor<double> B = Tensor<double>::uniform({N}, -1.0, 1.0, rng);
  RandomStaticInstance inst;
  inst.disc = discretize(A, B, rng.uniform(0.1, 1.0));
  inst.C = Tensor<double>::uniform({N}, -1.0, 1.0, rng);
  inst.x = Tensor<double>::uniform({L, D}, -1.0, 1.0, rng);
  return inst;
}

TEST(DiscretizeTest, HandEvaluated) {
  Tensor<double> A = Tensor<double>::from({1}, {-1.0});
  Tensor<double> B = Tensor<double>::from({1}, {1.0});
  DiscreteSSM<double> d = discretize(A, B, std::log(2.0));
  EXPECT_NEAR(d.abar.at({0}), 0.5, 1e-15);
  EXPECT_NEAR(d.bbar.at({0}), 0.5, 1e-15);
}

TEST(DiscretizeTest, SmallDeltaLimit) {
  Tensor<double> A = Tensor<double>::from({1}, {-1.0});
  Tensor<double> B = Tensor<double>::from({1}, {1.0});
  DiscreteSSM<double> d = discretize(A, B, 1e-9);
  EXPECT_NEAR(d.abar.at({0}), 1.0, 1e-8);
  EXPECT_NEAR(d.bbar.at({0}), 1e-9, 1e-15);
  EXPECT_TRUE(std::isfinite(d.bbar.at({0})));
  // Taylor-limit oracle: bbar = delta*B*(1 - z/2 + ...) with z = delta*A
  const double z = -1e-9;
  EXPECT_NEAR(d.bbar.at({0}), 1e-9 * (1.0 + z / 2.0 + z * z / 6.0), 1e-24);
}

TEST(DiscretizeTest, NonPositiveDeltaRejected) {
  Tensor<double> A = Tensor<double>::from({1}, {-1.0});
  Tensor<double> B = Tensor<double>::from({1}, {1.0});
  EXPECT_THROW(discretize(A, B, 0.0), ValueError);
  EXPECT_THROW(discretize(A, B, -0.5), ValueError);
}

TEST(DiscretizeTest, AbarInUnitIntervalForStableA) {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> A = Tensor<double>::uniform({8}, -3.0, -0.01, rng);
    Tensor<double> B = Tensor<double>::uniform({8}, -1.0, 1.0, rng);
    DiscreteSSM<double> d = discretize(A, B, rng.uniform(0.01, 2.0));
    for (double v : d.abar.data()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(ScanSequentialTest, HandUnrolled) {
  DiscreteSSM<double> d{Tensor<double>::from({1}, {0.5}), Tensor<double>::from({1}, {0.5})};
  Tensor<double> C = Tensor<double>::from({1}, {1.0});
  Tensor<double> x = Tensor<double>::filled({3, 1}, 1.0);
  Tensor<double> y = scan_sequential(make_scan_params(d, C, 3, 1), x);
  EXPECT_NEAR(y.at({0, 0}), 0.5, 1e-15);
  EXPECT_NEAR(y.at({1, 0}), 0.75, 1e-15);
  EXPECT_NEAR(y.at({2, 0}), 0.875, 1e-15);
}

TEST(ScanSequentialTest, ZeroInputZeroOutput) {
  Rng rng(1);
  auto inst = random_static(4, 3, 8, rng);
  Tensor<double> y = scan_sequential(make_scan_params(inst.disc, inst.C, 8, 3),
                                     Tensor<double>::zeros({8, 3}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(ScanSequentialTest, MemorylessWhenAbarZero) {
  Rng rng(2);
  DiscreteSSM<double> d{Tensor<double>::from({1}, {0.0}), Tensor<double>::from({1}, {0.7})};
  Tensor<double> C = Tensor<double>::from({1}, {1.3});
  Tensor<double> x = Tensor<double>::uniform({6, 2}, -1, 1, rng);
  Tensor<double> y = scan_sequential(make_scan_params(d, C, 6, 2), x);
  for (index_t t = 0; t < 6; ++t) {
    for (index_t ch = 0; ch < 2; ++ch) {
      EXPECT_NEAR(y.at({t, ch}), 1.3 * 0.7 * x.at({t, ch}), 1e-15);
    }
  }
}

TEST(ScanSequentialTest, LengthMismatchRejected) {
  Rng rng(3);
  auto inst = random_static(4, 2, 8, rng);
  ScanParams<double> p = make_scan_params(inst.disc, inst.C, 8, 2);
  Tensor<double> wrong = Tensor<double>::zeros({5, 2});
  EXPECT_THROW(scan_sequential(p, wrong), ShapeError);
}

TEST(KernelFormTest, HandEvaluated) {
  DiscreteSSM<double> d{Tensor<double>::from({1}, {0.5}), Tensor<double>::from({1}, {0.5})};
  Tensor<double> C = Tensor<double>::from({1}, {1.0});
  Tensor<double> K = kernel_form(d, C, 3);
  EXPECT_NEAR(K.at({0}), 0.5, 1e-15);
  EXPECT_NEAR(K.at({1}), 0.25, 1e-15);
  EXPECT_NEAR(K.at({2}), 0.125, 1e-15);
}

TEST(KernelFormTest, MatchesSequentialScan) {
  DiscreteSSM<double> d{Tensor<double>::from({1}, {0.5}), Tensor<double>::from({1}, {0.5})};
  Tensor<double> C = Tensor<double>::from({1}, {1.0});
  Tensor<double> x = Tensor<double>::filled({3, 1}, 1.0);
  Tensor<double> y = apply_kernel(kernel_form(d, C, 3), x);
  EXPECT_NEAR(y.at({0, 0}), 0.5, 1e-15);
  EXPECT_NEAR(y.at({1, 0}), 0.75, 1e-15);
  EXPECT_NEAR(y.at({2, 0}), 0.875, 1e-15);
  Tensor<double> ys = scan_sequential(make_scan_params(d, C, 3, 1), x);
  EXPECT_LT(max_abs_diff(y, ys), 1e-10);
}

TEST(KernelFormTest, ZeroCGivesZeroKernel) {
  DiscreteSSM<double> d{Tensor<double>::from({2}, {0.5, 0.3}), Tensor<double>::from({2}, {0.5, 0.2})};
  Tensor<double> C = Tensor<double>::zeros({2});
  Tensor<double> K = kernel_form(d, C, 4);
  for (double v : K.data()) EXPECT_EQ(v, 0.0);
}

TEST(KernelFormTest, SelectiveParamsRejected) {
  Rng rng(4);
  Tensor<double> x = Tensor<double>::uniform({6, 2}, -1, 1, rng);
  Linear<double> sb = Linear<double>::make(2, 4, rng);
  Linear<double> sc = Linear<double>::make(2, 4, rng);
  Linear<double> sd = Linear<double>::make(2, 2, rng);
  SelectiveParams<double> sp = selective_params(x, sb.weight, sb.bias, sc.weight, sc.bias,
                                                sd.weight, sd.bias);
  ScanParams<double> p = make_scan_params(sp, init_state_matrix<double>(2, 4));
  EXPECT_THROW(kernel_form(p, 6), ContractError);
}

TEST(SelectiveParamsTest, ZeroProjectionGivesConstants) {
  Tensor<double> x = Tensor<double>::from({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor<double> wB = Tensor<double>::zeros({2, 4});
  Tensor<double> bB = Tensor<double>::from({4}, {0.1, 0.2, 0.3, 0.4});
  Tensor<double> wD = Tensor<double>::zeros({2, 2});
  Tensor<double> bD = Tensor<double>::from({2}, {0.5, -0.5});
  SelectiveParams<double> sp = selective_params(x, wB, bB, wB, bB, wD, bD);
  for (index_t t = 0; t < 3; ++t) {
    for (index_t n = 0; n < 4; ++n) EXPECT_DOUBLE_EQ(sp.B.at({t, n}), bB.at({n}));
    for (index_t d = 0; d < 2; ++d) {
      EXPECT_NEAR(sp.delta.at({t, d}), detail::softplus_scalar(bD.at({d})), 1e-15);
    }
  }
}

TEST(SelectiveParamsTest, PositionwisePermutationEquivariance) {
  Rng rng(5);
  Tensor<double> x = Tensor<double>::uniform({5, 3}, -1, 1, rng);
  Linear<double> sb = Linear<double>::make(3, 4, rng);
  Linear<double> sc = Linear<double>::make(3, 4, rng);
  Linear<double> sd = Linear<double>::make(3, 3, rng);
  auto run = [&](const Tensor<double>& in) {
    return selective_params(in, sb.weight, sb.bias, sc.weight, sc.bias, sd.weight, sd.bias);
  };
  SelectiveParams<double> sp = run(x);
  Tensor<double> xr = reverse(x, 0);  // reversal is one particular permutation
  SelectiveParams<double> spr = run(xr);
  EXPECT_LT(max_abs_diff(reverse(sp.B, 0), spr.B), 1e-14);
  EXPECT_LT(max_abs_diff(reverse(sp.C, 0), spr.C), 1e-14);
  EXPECT_LT(max_abs_diff(reverse(sp.delta, 0), spr.delta), 1e-14);
}

TEST(SelectiveParamsTest, DeltaAlwaysPositive) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor<double> x = Tensor<double>::uniform({16, 4}, -5, 5, rng);
    Linear<double> sb = Linear<double>::make(4, 8, rng);
    Linear<double> sc = Linear<double>::make(4, 8, rng);
    Linear<double> sd = Linear<double>::make(4, 4, rng);
    SelectiveParams<double> sp = selective_params(x, sb.weight, sb.bias, sc.weight, sc.bias,
                                                  sd.weight, sd.bias);
    for (double v : sp.delta.data()) EXPECT_GT(v, 0.0);
  }
}

TEST(AffineMapTest, CompositionIsAssociative) {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    AffineMap<double> u{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    AffineMap<double> v{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    AffineMap<double> w{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    AffineMap<double> left = affine_then(affine_then(u, v), w);
    AffineMap<double> right = affine_then(u, affine_then(v, w));
    EXPECT_NEAR(left.a, right.a, 1e-15);
    EXPECT_NEAR(left.b, right.b, 1e-15);
  }
}

TEST(ScanParallelTest, SingleStepMatchesSequential) {
  Rng rng(8);
  auto inst = random_static(4, 3, 1, rng);
  ScanParams<double> p = make_scan_params(inst.disc, inst.C, 1, 3);
  Tensor<double> ys = scan_sequential(p, inst.x);
  Tensor<double> yp = scan_parallel(p, inst.x);
  EXPECT_LT(max_abs_diff(ys, yp), 1e-15);
}

TEST(ScanParallelTest, PrefixSumDegenerateCase) {
  // a_t = 1, b_t = x_t with C = 1 reduces the scan to a running sum.
  const index_t L = 10;
  Tensor<double> abar = Tensor<double>::filled({L, 1, 1}, 1.0);
  Tensor<double> bbar = Tensor<double>::filled({L, 1, 1}, 1.0);
  Tensor<double> c = Tensor<double>::filled({L, 1}, 1.0);
  Rng rng(9);
  Tensor<double> x = Tensor<double>::uniform({L, 1}, -1, 1, rng);
  Tensor<double> y = selective_scan_par(abar, bbar, c, x);
  double acc = 0;
  for (index_t t = 0; t < L; ++t) {
    acc += x.at({t, 0});
    EXPECT_NEAR(y.at({t, 0}), acc, 1e-12);
  }
}

TEST(ScanParallelTest, MatchesSequentialOnRandomInstance) {
  Rng rng(10);
  auto inst = random_static(16, 8, 64, rng);
  ScanParams<double> p = make_scan_params(inst.disc, inst.C, 64, 8);
  Tensor<double> ys = scan_sequential(p, inst.x);
  Tensor<double> yp = scan_parallel(p, inst.x);
  EXPECT_LT(max_abs_diff(ys, yp), 1e-10);
}

TEST(ScanParallelTest, NonPowerOfTwoLengths) {
  Rng rng(11);
  for (index_t L : {2, 3, 5, 7, 17, 33, 63}) {
    auto inst = random_static(5, 2, L, rng);
    ScanParams<double> p = make_scan_params(inst.disc, inst.C, L, 2);
    EXPECT_LT(max_abs_diff(scan_sequential(p, inst.x), scan_parallel(p, inst.x)), 1e-10)
        << "L=" << L;
  }
}

TEST(ScanParallelTest, IndependentOfWorkerCount) {
  Rng rng(12);
  auto inst = random_static(8, 4, 37, rng);
  ScanParams<double> p = make_scan_params(inst.disc, inst.C, 37, 4);
  set_max_threads(1);
  Tensor<double> y1 = scan_parallel(p, inst.x);
  set_max_threads(4);
  Tensor<double> y4 = scan_parallel(p, inst.x);
  set_max_threads(0);
  EXPECT_EQ(y1.data(), y4.data());
}

TEST(ScanEquivalenceTest, ThreeWayTimeInvariant100Instances) {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const index_t N = 1 + rng.index(16);
    const index_t D = 1 + rng.index(8);
    const index_t L = 1 + rng.index(64);
    auto inst = random_static(N, D, L, rng);
    ScanParams<double> p = make_scan_params(inst.disc, inst.C, L, D);
    Tensor<double> ys = scan_sequential(p, inst.x);
    Tensor<double> yp = scan_parallel(p, inst.x);
    Tensor<double> yk = apply_kernel(kernel_form(inst.disc, inst.C, L), inst.x);
    EXPECT_LT(max_abs_diff(ys, yp), 1e-10) << "trial " << trial;
    EXPECT_LT(max_abs_diff(ys, yk), 1e-10) << "trial " << trial;
  }
}

TEST(ScanEquivalenceTest, SelectiveTwoWay) {
  Rng rng(14);
  for (int trial = 0; trial < 50; ++trial) {
    const index_t N = 1 + rng.index(8);
    const index_t D = 1 + rng.index(4);
    const index_t L = 1 + rng.index(48);
    Tensor<double> delta = Tensor<double>::uniform({L, D}, 0.05, 1.0, rng);
    Tensor<double> A = Tensor<double>::uniform({D, N}, -2.0, -0.1, rng);
    Tensor<double> B = Tensor<double>::uniform({L, N}, -1, 1, rng);
    Tensor<double> C = Tensor<double>::uniform({L, N}, -1, 1, rng);
    Tensor<double> x = Tensor<double>::uniform({L, D}, -1, 1, rng);
    auto [abar, bbar] = zoh_discretize(delta, A, B);
    Tensor<double> ys = selective_scan_seq(abar, bbar, C, x);
    Tensor<double> yp = selective_scan_par(abar, bbar, C, x);
    EXPECT_LT(max_abs_diff(ys, yp), 1e-10) << "trial " << trial;
  }
}

TEST(ScanStabilityTest, BoundedStateForStableA) {
  Rng rng(15);
  const index_t L = 512, D = 2, N = 4;
  auto inst = random_static(N, D, L, rng);
  ScanParams<double> p = make_scan_params(inst.disc, inst.C, L, D);
  // bound: |h| <= max|bbar * x| / (1 - max abar)
  double max_abar = 0, max_bx = 0;
  for (double v : p.abar.data()) max_abar = std::max(max_abar, std::abs(v));
  for (index_t t = 0; t < L; ++t) {
    for (index_t d = 0; d < D; ++d) {
      for (index_t n = 0; n < N; ++n) {
        max_bx = std::max(max_bx, std::abs(p.bbar.at({t, d, n}) * inst.x.at({t, d})));
      }
    }
  }
  const double bound = max_bx / (1.0 - max_abar);
  double max_c = 0;
  for (double v : inst.C.data()) max_c = std::max(max_c, std::abs(v));
  Tensor<double> y = scan_sequential(p, inst.x);
  for (double v : y.data()) EXPECT_LE(std::abs(v), N * max_c * bound * (1.0 + 1e-12));
}

TEST(ScanGradientTest, SequentialThroughEightSteps) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 20);
    const index_t L = 8, D = 2, N = 3;
    Tensor<double> abar = Tensor<double>::uniform({L, D, N}, 0.1, 0.9, rng);
    Tensor<double> bbar = Tensor<double>::uniform({L, D, N}, -1, 1, rng);
    Tensor<double> c = Tensor<double>::uniform({L, N}, -1, 1, rng);
    Tensor<double> x = Tensor<double>::uniform({L, D}, -1, 1, rng);
    auto fn = [](const std::vector<Tensor<double>>& in) {
      Rng wrng(3);
      Tensor<double> w = Tensor<double>::uniform({8, 2}, 0.1, 1.0, wrng);
      return sum_all(mul(selective_scan_seq(in[0], in[1], in[2], in[3]), w));
    };
    EXPECT_TRUE(fd_check(fn, {abar, bbar, c, x}).empty()) << "seed " << seed;
  }
}

TEST(ScanGradientTest, ParallelMatchesSequentialGradient) {
  Rng rng(30);
  const index_t L = 12, D = 2, N = 3;
  Tensor<double> abar = Tensor<double>::uniform({L, D, N}, 0.1, 0.9, rng);
  Tensor<double> bbar = Tensor<double>::uniform({L, D, N}, -1, 1, rng);
  Tensor<double> c = Tensor<double>::uniform({L, N}, -1, 1, rng);
  Tensor<double> x = Tensor<double>::uniform({L, D}, -1, 1, rng);
  for (auto* t : {&abar, &bbar, &c, &x}) t->set_requires_grad(true);

  auto grads_with = [&](auto scan_fn) {
    GradTape<double> tape;
    Tensor<double> y = scan_fn(abar, bbar, c, x);
    tape.backward(sum_all(y));
    std::vector<std::vector<double>> out;
    for (auto* t : {&abar, &bbar, &c, &x}) {
      out.push_back(t->grad());
      t->zero_grad();
    }
    return out;
  };
  auto gs = grads_with([](auto&&... a) { return selective_scan_seq(a...); });
  auto gp = grads_with([](auto&&... a) { return selective_scan_par(a...); });
  for (std::size_t i = 0; i < gs.size(); ++i) {
    for (std::size_t j = 0; j < gs[i].size(); ++j) {
      EXPECT_NEAR(gs[i][j], gp[i][j], 1e-10);
    }
  }
}

TEST(ZohDiscretizeTest, GradientCheck) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed + 40);
    Tensor<double> delta = Tensor<double>::uniform({4, 3}, 0.05, 1.0, rng);
    Tensor<double> A = Tensor<double>::uniform({3, 2}, -2.0, -0.1, rng);
    Tensor<double> B = Tensor<double>::uniform({4, 2}, -1, 1, rng);
    auto fn = [](const std::vector<Tensor<double>>& in) {
      auto [abar, bbar] = zoh_discretize(in[0], in[1], in[2]);
      Rng wrng(5);
      Tensor<double> w1 = Tensor<double>::uniform(abar.shape(), 0.1, 1.0, wrng);
      Tensor<double> w2 = Tensor<double>::uniform(bbar.shape(), 0.1, 1.0, wrng);
      return add(sum_all(mul(abar, w1)), sum_all(mul(bbar, w2)));
    };
    EXPECT_TRUE(fd_check(fn, {delta, A, B}).empty()) << "seed " << seed;
  }
}

TEST(ZohDiscretizeTest, GradientAcrossSeriesBranch) {
  // Exercise the |z| < 1e-6 series branch of phi1.
  Rng rng(50);
  Tensor<double> delta = Tensor<double>::uniform({2, 2}, 1e-8, 5e-8, rng);
  Tensor<double> A = Tensor<double>::uniform({2, 2}, -2.0, -0.5, rng);
  Tensor<double> B = Tensor<double>::uniform({2, 2}, -1, 1, rng);
  auto fn = [](const std::vector<Tensor<double>>& in) {
    auto [abar, bbar] = zoh_discretize(in[0], in[1], in[2]);
    return add(sum_all(abar), sum_all(scale(bbar, 1e6)));
  };
  // Absolute tolerance dominates here; the values are tiny.
  EXPECT_TRUE(fd_check(fn, {delta, A, B}, 1e-9, 1e-3, 1e-4).empty());
}

}  // namespace
}  // namespace ssmflow
