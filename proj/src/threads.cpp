#include "taperkit/threads.hpp"

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace taperkit {

int worker_count() {
  if (const char* env = std::getenv("TAPERKIT_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 0) return n;
    } catch (...) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  const int workers = worker_count();
  if (workers <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int64_t nt = std::min<int64_t>(workers, n);
  const int64_t chunk = (n + nt - 1) / nt;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(nt));
  for (int64_t t = 0; t < nt; ++t) {
    const int64_t lo = t * chunk;
    const int64_t hi = std::min(n, lo + chunk);
    pool.emplace_back([lo, hi, &fn] {
      for (int64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace taperkit
