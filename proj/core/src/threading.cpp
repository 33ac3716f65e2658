#include "splatnorm/threading.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace splatnorm {
namespace {

int resolve_thread_count() {
  if (const char* env = std::getenv("SPLATNORM_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

int g_thread_count = resolve_thread_count();

}  // namespace

int thread_count() { return g_thread_count; }

void set_thread_count(int n) { g_thread_count = std::max(1, n); }

void parallel_for_chunked(int64_t n, const std::function<void(int64_t, int64_t)>& f) {
  if (n <= 0) return;
  int workers = static_cast<int>(std::min<int64_t>(g_thread_count, n));
  if (workers <= 1) {
    f(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    int64_t begin = w * chunk;
    int64_t end = std::min<int64_t>(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&f, begin, end] { f(begin, end); });
  }
  for (auto& t : pool) t.join();
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& f) {
  parallel_for_chunked(n, [&f](int64_t begin, int64_t end) {
    for (int64_t i = begin; i < end; ++i) f(i);
  });
}

}  // namespace splatnorm
