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

#include "ssmflow/ssm.hpp"

// Wall-clock scaling of the scan forms over doubling sequence lengths. The
// scan forms are O(L) per element; the convolutional kernel form is O(L^2)
// and is benchmarked only to document why the scan is the runtime path.

namespace ssmflow {

struct BenchRow {
  std::string form;  // "sequential", "parallel", "kernel"
  index_t L = 0;
  index_t N = 0;
  index_t D = 0;
  double ns_per_element = 0;  // per input element (L*D), best of several trials
};

namespace detail {

template <typename Fn>
double best_ns(Fn&& fn, int reps, int trials) {
  using clock = std::chrono::steady_clock;
  double best = 1e300;
  for (int t = 0; t < trials; ++t) {
    auto start = clock::now();
    for (int r = 0; r < reps; ++r) fn();
    auto stop = clock::now();
    const double ns = std::chrono::duration<double, std::nano>(stop - start).count() / reps;
    best = std::min(best, ns);
  }
  return best;
}

}  // namespace detail

/// Times the scan forms at L = 1024, 2048, ..., max_len. kernel_max caps the
/// quadratic form separately (0 disables it).
inline std::vector<BenchRow> bench_scan(index_t max_len, index_t N, index_t D,
                                        index_t kernel_max = 8192) {
  std::vector<BenchRow> rows;
  Rng rng(4242);
  for (index_t L = 1024; L <= max_len; L <<= 1) {
    Tensor<double> A = Tensor<double>::uniform({N}, -2.0, -0.1, rng);
    Tensor<double> B = Tensor<double>::uniform({N}, -1.0, 1.0, rng);
    Tensor<double> C = Tensor<double>::uniform({N}, -1.0, 1.0, rng);
    DiscreteSSM<double> disc = discretize(A, B, 0.5);
    ScanParams<double> params = make_scan_params(disc, C, L, D);
    Tensor<double> x = Tensor<double>::uniform({L, D}, -1.0, 1.0, rng);

    const double elements = static_cast<double>(L * D);
    const int reps = std::max(1, static_cast<int>((1 << 22) / (L * D * N)));

    double seq = detail::best_ns([&] { scan_sequential(params, x); }, reps, 5);
    rows.push_back({"sequential", L, N, D, seq / elements});
    double par = detail::best_ns([&] { scan_parallel(params, x); }, reps, 5);
    rows.push_back({"parallel", L, N, D, par / elements});
    if (kernel_max > 0 && L <= kernel_max) {
      Tensor<double> K = kernel_form(disc, C, L);
      double ker = detail::best_ns([&] { apply_kernel(K, x); }, std::max(1, reps / 8), 3);
      rows.push_back({"kernel", L, N, D, ker / elements});
    }
  }
  return rows;
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "form,L,N,D,ns_per_element\n";
  for (const auto& r : rows) {
    os << r.form << "," << r.L << "," << r.N << "," << r.D << "," << r.ns_per_element << "\n";
  }
  return os.str();
}

/// Ratios time(2L)/time(L) for one form, keyed by the larger length.
inline std::vector<std::pair<index_t, double>> doubling_ratios(const std::vector<BenchRow>& rows,
                                                               const std::string& form) {
  std::vector<std::pair<index_t, double>> out;
  const BenchRow* prev = nullptr;
  for (const auto& r : rows) {
    if (r.form != form) continue;
    if (prev) {
      const double t_prev = prev->ns_per_element * prev->L * prev->D;
      const double t_cur = r.ns_per_element * r.L * r.D;
      out.emplace_back(r.L, t_cur / t_prev);
    }
    prev = &r;
  }
  return out;
}

}  // namespace ssmflow
