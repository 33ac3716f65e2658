#pragma once

#include <cstdint>
#include <functional>

namespace splatnorm {

// Worker count, resolved once from SPLATNORM_THREADS (falls back to
// hardware_concurrency). set_thread_count overrides at runtime.
int thread_count();
void set_thread_count(int n);

// Runs f(i) for i in [0, n). Work items must write disjoint locations; the
// index-to-result mapping is then bit-identical for every thread count.
void parallel_for(int64_t n, const std::function<void(int64_t)>& f);

// Chunked variant: f(begin, end) over a static partition.
void parallel_for_chunked(int64_t n, const std::function<void(int64_t, int64_t)>& f);

}  // namespace splatnorm
