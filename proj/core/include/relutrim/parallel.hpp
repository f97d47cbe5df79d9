#pragma once

// Tiny work-sharing loop for embarrassingly parallel jobs (independent layer
// solves, Monte-Carlo trials). Callers index results by iteration, so thread
// count and scheduling never affect the output.

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "relutrim/types.hpp"

namespace relutrim {

// Runs body(0..n-1) on up to `jobs` threads. Iterations must be independent;
// the first exception wins and is rethrown after all workers join.
inline void parallel_for(Index n, int jobs,
                         const std::function<void(Index)>& body) {
  const int workers = static_cast<int>(
      std::min<Index>(std::max(jobs, 1), std::max<Index>(n, 1)));
  if (workers <= 1 || n <= 1) {
    for (Index i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<Index> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto run = [&] {
    while (true) {
      const Index i = next.fetch_add(1);
      if (i >= n) break;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int t = 0; t < workers; ++t) pool.emplace_back(run);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace relutrim
