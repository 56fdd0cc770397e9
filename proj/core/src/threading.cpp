#include "affect/threading.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace affect {

namespace {
std::atomic<int> g_threads{1};
}

void set_num_threads(int n) {
  g_threads.store(std::max(1, n));
}

int num_threads() { return g_threads.load(); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  const int workers = static_cast<int>(std::min<std::int64_t>(num_threads(), n));
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  const std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const std::int64_t begin = w * chunk;
    const std::int64_t end = std::min<std::int64_t>(begin + chunk, n);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace affect
