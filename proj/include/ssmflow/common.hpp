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

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ssmflow {

using index_t = std::int64_t;
using Shape = std::vector<index_t>;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Mismatched or invalid tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument values (non-positive step size, empty axis list, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Allocation request above a configured resolution cap.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// An operation invoked outside its stated preconditions.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// File reading/writing problems. Subclasses distinguish the failure modes.
class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public IoError {
 public:
  using IoError::IoError;
};

class TruncationError : public IoError {
 public:
  using IoError::IoError;
};

class ConfigMismatchError : public IoError {
 public:
  using IoError::IoError;
};

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline index_t numel_of(const Shape& s) {
  index_t n = 1;
  for (index_t e : s) n *= e;
  return n;
}

/// Deterministic RNG used for parameter init, synthetic data and tests.
/// Normal deviates are produced by Box-Muller so the stream does not depend
/// on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

  index_t index(index_t n) { return static_cast<index_t>(next() % static_cast<std::uint64_t>(n)); }

 private:
  std::uint64_t state_;
};

namespace detail {
inline std::atomic<int>& thread_override() {
  static std::atomic<int> v{0};
  return v;
}
}  // namespace detail

/// Worker cap: SSMFLOW_THREADS env (0 = auto) or a programmatic override.
inline int max_threads() {
  int ov = detail::thread_override().load();
  if (ov > 0) return ov;
  if (const char* env = std::getenv("SSMFLOW_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Overrides the worker cap for this process (0 restores env/auto behaviour).
inline void set_max_threads(int n) { detail::thread_override().store(n); }

/// Splits [0, n) into fixed chunks and runs `fn(lo, hi)` on each, possibly on
/// several threads. Chunk boundaries depend only on n and the worker cap, so
/// results are identical for any actual scheduling as long as chunks write
/// disjoint outputs.
inline void parallel_for(index_t n, index_t grain, const std::function<void(index_t, index_t)>& fn) {
  if (n <= 0) return;
  int workers = max_threads();
  if (grain < 1) grain = 1;
  index_t max_chunks = (n + grain - 1) / grain;
  if (workers > max_chunks) workers = static_cast<int>(max_chunks);
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  for (int w = 1; w < workers; ++w) {
    index_t lo = n * w / workers;
    index_t hi = n * (w + 1) / workers;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  fn(0, n / workers);
  for (auto& t : pool) t.join();
}

}  // namespace ssmflow
