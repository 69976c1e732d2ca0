#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ism {

inline int resolve_thread_count(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs `body(index)` for index in [0, count) on a small worker pool.
/// Work is handed out in fixed-size blocks keyed by index, so any
/// aggregation the caller performs per index (or per block, reduced in
/// block order) is independent of the thread count and of scheduling.
template <class Body>
void parallel_for_indexed(std::int64_t count, int threads, Body&& body,
                          std::int64_t block_size = 64) {
  threads = resolve_thread_count(threads);
  if (count <= 0) return;
  if (threads <= 1 || count <= block_size) {
    for (std::int64_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::int64_t> next_block{0};
  const std::int64_t n_blocks = (count + block_size - 1) / block_size;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::int64_t b = next_block.fetch_add(1);
      if (b >= n_blocks) return;
      const std::int64_t lo = b * block_size;
      const std::int64_t hi = std::min(count, lo + block_size);
      try {
        for (std::int64_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace ism
