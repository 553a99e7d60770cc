#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace apx {

/// Worker count for element loops: APX_THREADS if set (>= 1), otherwise the
/// hardware concurrency capped at 8.
inline unsigned assembly_threads() {
  if (const char* env = std::getenv("APX_THREADS")) {
    char* end = nullptr;
    long n = std::strtol(env, &end, 10);
    if (end != env && n >= 1) return static_cast<unsigned>(n);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return std::clamp(hw, 1u, 8u);
}

/// Calls body(i) for i in [0, n) over contiguous chunks. The body must only
/// write to per-index storage; callers reduce afterwards in index order, so
/// results do not depend on the thread count.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  const unsigned threads = static_cast<unsigned>(
      std::min<std::size_t>(assembly_threads(), std::max<std::size_t>(1, n / 256)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

} // namespace apx
