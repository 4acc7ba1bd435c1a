#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace ssni {

// Runs fn(0..rows-1) either inline (workers <= 1, the deterministic mode) or
// across a small thread pool. Rows must touch disjoint state; per-row RNG is
// keyed, so sharding does not change results.
inline void run_rows(std::size_t rows, int workers,
                     const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || rows <= 1) {
    for (std::size_t i = 0; i < rows; ++i) fn(i);
    return;
  }
  std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(workers), rows);
  std::exception_ptr err;
  std::mutex err_mu;
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (std::size_t w = 0; w < n_threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < rows; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace ssni
