#pragma once

#include <cstddef>
#include <exception>
#include <functional>

namespace mtb {

// Worker count from MTB_THREADS, else hardware concurrency (at least 1).
std::size_t thread_count();

// Runs body(i) for i in [0, n) over contiguous chunks. Callers write results
// into per-index slots and reduce afterwards in index order, which keeps
// results independent of the thread count. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace mtb
