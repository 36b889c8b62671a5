#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace lmtcnn {

inline std::atomic<int>& worker_thread_slot() {
  static std::atomic<int> n{1};
  return n;
}

/// Caps worker parallelism for the loops below. 1 (the default) keeps every
/// computation on the calling thread.
inline void set_worker_threads(int n) { worker_thread_slot() = n < 1 ? 1 : n; }
inline int worker_threads() { return worker_thread_slot(); }

/// Runs fn(0..n-1). Results must go to disjoint per-index slots; callers
/// reduce afterwards in index order, so outputs do not depend on the thread
/// count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const int workers = worker_threads();
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto body = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::thread> pool;
  const int spawn = static_cast<int>(std::min<std::size_t>(workers, n)) - 1;
  pool.reserve(static_cast<std::size_t>(spawn));
  for (int t = 0; t < spawn; ++t) pool.emplace_back(body);
  body();
  for (auto& th : pool) th.join();
}

}  // namespace lmtcnn
