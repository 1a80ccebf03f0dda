// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pcfuse {

// ---------------------------------------------------------------------------
// Error taxonomy. CLI maps these onto exit codes (config 2, data 3,
// divergence 4); everything else is a programming error.
// ---------------------------------------------------------------------------
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ArgumentError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct DivergenceError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------
using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline void require_shape(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

// ---------------------------------------------------------------------------
// Pairwise (tree) summation. Keeps accumulation error ~O(log n) so that
// permutation-invariance tolerances in the metrics hold.
// ---------------------------------------------------------------------------
inline double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.subspan(0, half)) + pairwise_sum(xs.subspan(half));
}

inline double pairwise_sum(const std::vector<double>& xs) {
  return pairwise_sum(std::span<const double>(xs));
}

// ---------------------------------------------------------------------------
// Deterministic parallel-for: the index range is split into contiguous
// chunks, each index is processed by exactly one thread, and no thread
// ever writes outside its chunk. Results are bitwise independent of the
// thread count. Set PCFUSE_THREADS=1 to force serial execution.
// ---------------------------------------------------------------------------
inline unsigned worker_count() {
  static const unsigned n = [] {
    if (const char* env = std::getenv("PCFUSE_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v >= 1) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : (hw > 8 ? 8u : hw);
  }();
  return n;
}

template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, std::size_t grain, Fn&& fn) {
  const std::size_t count = end > begin ? end - begin : 0;
  const unsigned workers = worker_count();
  if (count == 0) return;
  if (workers <= 1 || count < grain * 2) {
    fn(begin, end);
    return;
  }
  const std::size_t chunks = std::min<std::size_t>(workers, (count + grain - 1) / grain);
  const std::size_t step = (count + chunks - 1) / chunks;
  std::vector<std::thread> threads;
  threads.reserve(chunks - 1);
  for (std::size_t c = 1; c < chunks; ++c) {
    const std::size_t lo = begin + c * step;
    const std::size_t hi = std::min(end, lo + step);
    if (lo >= hi) break;
    threads.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  fn(begin, std::min(end, begin + step));
  for (auto& t : threads) t.join();
}

}  // namespace pcfuse
