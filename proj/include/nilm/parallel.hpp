#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace nilm {

// Process-wide worker cap for the compute kernels (set from the CLI's
// --workers flag).  Parallel loops hand each index to exactly one worker and
// every index writes only its own output rows, so results are bit-identical
// for any worker count.
inline int& worker_count_slot() {
  static int count = 1;
  return count;
}

inline void set_worker_count(int n) { worker_count_slot() = std::max(1, n); }

inline int worker_count() { return worker_count_slot(); }

template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(worker_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace nilm
