#pragma once
// Deterministic parallel map over an index range. Work items write into
// preallocated slots, so results are identical for any thread count. The
// thread count defaults to the hardware concurrency and can be overridden
// with the FUNNEL_THREADS environment variable.

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace funnel {

inline int worker_count() {
  if (const char* env = std::getenv("FUNNEL_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

// Calls body(i) for i in [0, n) across workers. body must only touch slot i
// of any shared output.
inline void parallel_for(int n, const std::function<void(int)>& body) {
  const int workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace funnel
