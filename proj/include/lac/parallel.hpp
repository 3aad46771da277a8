#pragma once

#include <cstddef>
#include <functional>

namespace lac {

// Worker count from LAC_THREADS (default 1).
int worker_count();

// Runs fn(i) for i in [0, n) on up to worker_count() threads. Callers keep
// any shared state read-only and write only to slot i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Fixed chunk size for batched work; independent of the worker count.
inline constexpr std::size_t kChunkRows = 64;

}  // namespace lac
