#include "gflow/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace gflow {

namespace {

std::atomic<int> g_override{-1};

int env_threads() {
  if (const char* v = std::getenv("GFLOW_THREADS")) {
    try {
      return std::max(0, std::stoi(v));
    } catch (...) {
      return 0;
    }
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

}  // namespace

int thread_count() {
  const int o = g_override.load();
  return o >= 0 ? o : env_threads();
}

void set_thread_count_override(int n) { g_override.store(n); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const auto workers = static_cast<std::size_t>(std::max(1, thread_count()));
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const std::size_t used = std::min(workers, n);
  const std::size_t chunk = (n + used - 1) / used;
  // First exception per worker, rethrown on the caller after all joins.
  std::vector<std::exception_ptr> errors(used);
  auto run_chunk = [&](std::size_t w) {
    try {
      const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
      for (std::size_t i = lo; i < hi; ++i) body(i);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(used - 1);
    for (std::size_t w = 1; w < used; ++w) pool.emplace_back(run_chunk, w);
    run_chunk(0);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace gflow
