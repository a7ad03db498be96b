#pragma once

#include <cstddef>
#include <functional>

namespace gflow {

// Worker count from GFLOW_THREADS (0 or 1 = run inline on the calling
// thread). Unset means hardware concurrency.
int thread_count();
void set_thread_count_override(int n);  // < 0 restores the env-driven value

// Runs body(i) for i in [0, n). Work is split into contiguous static chunks;
// callers keep results independent of the split by writing to per-index
// slots only.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace gflow
