#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace elcell {

/// Runs fn(i) for i in [begin, end) across a small thread pool. Each index is
/// processed independently, so results do not depend on the thread count.
inline void parallel_for(int begin, int end, const std::function<void(int)>& fn) {
  const int n = end - begin;
  if (n <= 0) return;
  unsigned hw = std::thread::hardware_concurrency();
  int threads = static_cast<int>(std::max(1u, hw));
  threads = std::min(threads, n);
  if (threads == 1) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const int chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const int lo = begin + t * chunk;
    const int hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (int i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace elcell
