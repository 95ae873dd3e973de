#include "forec/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace forec {

namespace {

int initial_thread_count() {
  const char* env = std::getenv("FOREC_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  return n > 0 ? n : 1;
}

std::atomic<int> g_threads{initial_thread_count()};

}  // namespace

int thread_count() { return g_threads.load(std::memory_order_relaxed); }

void set_thread_count(int n) { g_threads.store(n > 0 ? n : 1, std::memory_order_relaxed); }

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  int workers = thread_count();
  if (workers <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  if (int64_t(workers) > n) workers = int(n);
  std::vector<std::thread> pool;
  pool.reserve(size_t(workers) - 1);
  int64_t chunk = (n + workers - 1) / workers;
  auto run = [&fn](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) fn(i);
  };
  for (int w = 1; w < workers; ++w) {
    int64_t lo = w * chunk;
    int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back(run, lo, hi);
  }
  run(0, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace forec
