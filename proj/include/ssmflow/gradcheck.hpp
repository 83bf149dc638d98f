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

#include <functional>

#include "ssmflow/model.hpp"

// Central finite-difference verification of tape gradients. The numeric side
// is the independent oracle: two forward evaluations per coordinate, no tape.

namespace ssmflow {

struct FdFailure {
  std::string where;
  double analytic = 0;
  double numeric = 0;
  double error = 0;
};

/// Compares d(fn)/d(inputs) against central differences. Every coordinate is
/// checked unless max_coords_per_input caps it (coordinates then sampled with
/// an even stride). Inputs are temporarily marked as requiring gradients.
inline std::vector<FdFailure> fd_check(
    const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& fn,
    std::vector<Tensor<double>> inputs, double h = 1e-5, double rtol = 1e-4, double atol = 1e-6,
    index_t max_coords_per_input = -1) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }

  std::vector<std::vector<double>> analytic(inputs.size());
  {
    GradTape<double> tape;
    Tensor<double> loss = fn(inputs);
    tape.backward(loss);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      analytic[i] = inputs[i].has_grad() ? inputs[i].grad()
                                         : std::vector<double>(inputs[i].data().size(), 0.0);
      inputs[i].zero_grad();
    }
  }

  std::vector<FdFailure> failures;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const index_t n = inputs[i].numel();
    index_t count = (max_coords_per_input < 0) ? n : std::min<index_t>(n, max_coords_per_input);
    for (index_t s = 0; s < count; ++s) {
      const index_t j = (count == n) ? s : (s * n / count);
      double* v = inputs[i].ptr() + j;
      const double orig = *v;
      *v = orig + h;
      const double fp = fn(inputs).item();
      *v = orig - h;
      const double fm = fn(inputs).item();
      *v = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i][static_cast<std::size_t>(j)];
      const double err = std::abs(a - numeric);
      const double tol = atol + rtol * std::max(std::abs(a), std::abs(numeric));
      if (err > tol) {
        failures.push_back(
            {"input " + std::to_string(i) + " coord " + std::to_string(j), a, numeric, err});
      }
    }
  }
  return failures;
}

struct GradCheckReport {
  std::string name;
  bool passed = true;
  std::string detail;
};

namespace detail {

inline Tensor<double> fd_project(const Tensor<double>& y, std::uint64_t seed = 7) {
  Rng rng(seed);
  Tensor<double> w = Tensor<double>::uniform(y.shape(), 0.1, 1.0, rng);
  return sum_all(mul(y, w));
}

inline void fd_report(std::vector<GradCheckReport>& out, const std::string& name,
                      const std::vector<FdFailure>& failures) {
  GradCheckReport r;
  r.name = name;
  r.passed = failures.empty();
  if (!failures.empty()) {
    r.detail = failures[0].where + ": analytic " + std::to_string(failures[0].analytic) +
               " vs numeric " + std::to_string(failures[0].numeric);
  }
  out.push_back(std::move(r));
}

}  // namespace detail

/// Finite-difference suite over every differentiable primitive.
inline std::vector<GradCheckReport> gradcheck_primitives() {
  std::vector<GradCheckReport> out;
  Rng rng(1234);
  auto rnd = [&](Shape s, double lo = -1, double hi = 1) {
    return Tensor<double>::uniform(std::move(s), lo, hi, rng);
  };
  using detail::fd_project;

  struct UnaryCase {
    const char* name;
    std::function<Tensor<double>(const Tensor<double>&)> fn;
    double lo, hi;
  };
  for (const UnaryCase& c : std::initializer_list<UnaryCase>{
           {"exp", [](const Tensor<double>& x) { return ssmflow::exp(x); }, -2, 2},
           {"sigmoid", [](const Tensor<double>& x) { return sigmoid(x); }, -4, 4},
           {"silu", [](const Tensor<double>& x) { return silu(x); }, -4, 4},
           {"gelu", [](const Tensor<double>& x) { return gelu(x); }, -4, 4},
           {"softplus", [](const Tensor<double>& x) { return softplus(x); }, -4, 4},
           {"abs", [](const Tensor<double>& x) { return ssmflow::abs(x); }, 0.5, 3},
           {"phi1", [](const Tensor<double>& x) { return phi1(x); }, -3, -0.01},
           {"scale", [](const Tensor<double>& x) { return scale(x, 1.7); }, -2, 2}}) {
    auto fn = [&](const std::vector<Tensor<double>>& in) { return fd_project(c.fn(in[0])); };
    detail::fd_report(out, c.name, fd_check(fn, {rnd({2, 3}, c.lo, c.hi)}));
  }

  detail::fd_report(out, "add",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(add(in[0], in[1]));
                    }, {rnd({3, 4}), rnd({3, 4})}));
  detail::fd_report(out, "add_bias",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(add(in[0], in[1]));
                    }, {rnd({3, 4}), rnd({4})}));
  detail::fd_report(out, "sub",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(sub(in[0], in[1]));
                    }, {rnd({3, 4}), rnd({3, 4})}));
  detail::fd_report(out, "mul",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(mul(in[0], in[1]));
                    }, {rnd({3, 4}), rnd({3, 4})}));
  detail::fd_report(out, "matmul",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(matmul(in[0], in[1]));
                    }, {rnd({3, 4}), rnd({4, 2})}));
  detail::fd_report(out, "matmul_nt",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(matmul_nt(in[0], in[1]));
                    }, {rnd({3, 4}), rnd({2, 4})}));
  detail::fd_report(out, "softmax",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(softmax(in[0], {1, 2}));
                    }, {rnd({2, 3, 4}, -2, 2)}));
  detail::fd_report(out, "sum_all",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return sum_all(mul(in[0], in[0]));
                    }, {rnd({3, 4})}));
  detail::fd_report(out, "reshape",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(reshape(in[0], {6, 4}));
                    }, {rnd({2, 3, 4})}));
  detail::fd_report(out, "reverse",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(reverse(in[0], 1));
                    }, {rnd({2, 3, 4})}));
  detail::fd_report(out, "concat_slice",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(slice_last(concat_last<double>({in[0], in[1]}), 1, 5));
                    }, {rnd({3, 4}), rnd({3, 2})}));
  detail::fd_report(out, "conv1d_depthwise_causal",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(conv1d_depthwise_causal(in[0], in[1], in[2]));
                    }, {rnd({6, 3}), rnd({3, 3}), rnd({3})}));
  detail::fd_report(out, "conv2d",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(conv2d(in[0], in[1], in[2], 1, 1));
                    }, {rnd({4, 4, 2}), rnd({3, 3, 2, 2}), rnd({2})}));
  detail::fd_report(out, "layernorm",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(layernorm(in[0], in[1], in[2]));
                    }, {rnd({4, 4, 2}), rnd({2}, 0.5, 1.5), rnd({2})}, 1e-5, 2e-4));
  detail::fd_report(out, "scale_channels",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(scale_channels(in[0], in[1]));
                    }, {rnd({4, 4, 2}), rnd({4, 4})}));
  detail::fd_report(out, "bilinear_resize",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(bilinear_resize(in[0], 7, 5));
                    }, {rnd({4, 4, 2})}));
  detail::fd_report(out, "zoh_discretize",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      auto [abar, bbar] = zoh_discretize(in[0], in[1], in[2]);
                      return add(detail::fd_project(abar), detail::fd_project(bbar, 8));
                    }, {rnd({4, 3}, 0.05, 1.0), rnd({3, 2}, -2.0, -0.1), rnd({4, 2})}));
  detail::fd_report(out, "selective_scan_seq",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(selective_scan_seq(in[0], in[1], in[2], in[3]));
                    }, {rnd({8, 2, 3}, 0.1, 0.9), rnd({8, 2, 3}), rnd({8, 3}), rnd({8, 2})}));
  detail::fd_report(out, "selective_scan_par",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(selective_scan_par(in[0], in[1], in[2], in[3]));
                    }, {rnd({8, 2, 3}, 0.1, 0.9), rnd({8, 2, 3}), rnd({8, 3}), rnd({8, 2})}));
  detail::fd_report(out, "lookup_cost",
                    fd_check([](const std::vector<Tensor<double>>& in) {
                      return detail::fd_project(lookup_cost(in[0], in[1], 1));
                    }, {rnd({3, 3, 3, 3}), rnd({3, 3, 2}, 0.2, 0.45)}));
  return out;
}

/// Composite blocks at small dimensions.
inline std::vector<GradCheckReport> gradcheck_blocks() {
  std::vector<GradCheckReport> out;
  Rng rng(77);
  {
    BidirSsmConfig<double> cfg;
    cfg.dim = 4;
    cfg.state_size = 4;
    cfg.expand = 2;
    cfg.conv_width = 3;
    auto block = BidirSsmBlock<double>::make(cfg, rng);
    auto fn = [&](const std::vector<Tensor<double>>& in) { return detail::fd_project(block(in[0])); };
    detail::fd_report(out, "self_block", fd_check(fn, {Tensor<double>::uniform({6, 4}, -1, 1, rng)}));
  }
  {
    CrossSsmConfig<double> cfg;
    cfg.dim = 4;
    cfg.state_size = 4;
    cfg.conv_width = 3;
    auto block = CrossSsmBlock<double>::make(cfg, rng);
    auto fn = [&](const std::vector<Tensor<double>>& in) {
      return detail::fd_project(block(in[0], in[1]));
    };
    detail::fd_report(out, "cross_block",
                      fd_check(fn, {Tensor<double>::uniform({6, 4}, -1, 1, rng),
                                    Tensor<double>::uniform({6, 4}, -1, 1, rng)}));
  }
  {
    auto aga = AttentionAggregator<double>::make(4, 4, 8, rng);
    auto fn = [&](const std::vector<Tensor<double>>& in) {
      auto [x, attn] = aga(in[0], in[1], in[2]);
      return detail::fd_project(x);
    };
    detail::fd_report(out, "attention_aggregator",
                      fd_check(fn, {Tensor<double>::uniform({3, 3, 4}, -1, 1, rng),
                                    Tensor<double>::uniform({3, 3, 4}, -1, 1, rng),
                                    Tensor<double>::uniform({3, 3, 8}, -1, 1, rng)}));
  }
  {
    RefinerConfig<double> cfg;
    cfg.context_dim = 6;
    cfg.hidden_dim = 8;
    cfg.motion_dim = 4;
    cfg.lookup_radius = 1;
    cfg.state_size = 4;
    cfg.expand = 2;
    cfg.conv_width = 3;
    Refiner<double> refiner = Refiner<double>::make(cfg, rng);
    Tensor<double> cost = Tensor<double>::uniform({3, 3, 3, 3}, -1, 1, rng);
    Tensor<double> context = Tensor<double>::uniform({3, 3, 6}, -1, 1, rng);
    Tensor<double> v0 = Tensor<double>::uniform({3, 3, 2}, 0.15, 0.4, rng);
    auto fn = [&](const std::vector<Tensor<double>>& in) {
      RefinementState<double> s = refiner.initial_state(in[2]);
      s = refiner.step(s, in[1], in[0]);
      return detail::fd_project(s.flow);
    };
    detail::fd_report(out, "pulse_step", fd_check(fn, {cost, context, v0}, 1e-5, 5e-4, 1e-6));
  }
  return out;
}

/// End-to-end 16x16 check at the relaxed tolerance.
inline std::vector<GradCheckReport> gradcheck_end2end() {
  std::vector<GradCheckReport> out;
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.downsample = 4;
  cfg.blocks = 1;
  cfg.state_size = 4;
  cfg.expand = 2;
  cfg.conv_width = 3;
  cfg.mlp_ratio = 2;
  cfg.iterations = 1;
  cfg.hidden_dim = 8;
  cfg.motion_dim = 4;
  cfg.lookup_radius = 1;
  cfg.pos_height = 4;
  cfg.pos_width = 4;
  cfg.precision = "f64";
  Model<double> model = Model<double>::make(cfg, 21);
  Rng rng(9);
  Tensor<double> img1 = Tensor<double>::uniform({16, 16, 3}, 0.2, 0.8, rng);
  Tensor<double> img2 = Tensor<double>::uniform({16, 16, 3}, 0.2, 0.8, rng);
  auto fn = [&](const std::vector<Tensor<double>>& in) {
    ModelOutput<double> o = model.forward(in[0], in[1]);
    return detail::fd_project(o.flow_image, 10);
  };
  detail::fd_report(out, "end2end_images", fd_check(fn, {img1, img2}, 1e-5, 1e-3, 1e-6, 24));
  img1.set_requires_grad(false);
  img2.set_requires_grad(false);
  auto fn_params = [&](const std::vector<Tensor<double>>&) {
    ModelOutput<double> o = model.forward(img1, img2);
    return detail::fd_project(o.flow_image, 10);
  };
  detail::fd_report(out, "end2end_params",
                    fd_check(fn_params,
                             {model.backbone.stem.kernel, model.pos.emb,
                              model.enhancer.blocks[0].cross_12.fwd.joint.weight,
                              model.refiner.head2.kernel},
                             1e-5, 1e-3, 1e-6, 10));
  return out;
}

}  // namespace ssmflow
