#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace musicqa {

// Runs fn(i) for every i in [0, n) on up to `workers` threads. Work is handed
// out in contiguous blocks from a shared counter. The first exception thrown
// by any task is rethrown on the calling thread after all workers join.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn, std::size_t block = 64) {
  if (n == 0) return;
  workers = std::clamp<std::size_t>(workers, 1, (n + block - 1) / block);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto body = [&] {
    try {
      for (;;) {
        const std::size_t begin = next.fetch_add(block);
        if (begin >= n) break;
        const std::size_t end = std::min(n, begin + block);
        for (std::size_t i = begin; i < end; ++i) fn(i);
      }
    } catch (...) {
      std::lock_guard lock(error_mu);
      if (!error) error = std::current_exception();
      next.store(n);
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
    body();
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace musicqa
