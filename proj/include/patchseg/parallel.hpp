#pragma once

#include <cstddef>
#include <functional>

namespace patchseg {

// Worker count: min(hardware_concurrency, PATCHSEG_THREADS) with a floor of 1.
int worker_count();

// Runs fn(begin, end) over a partition of [0, n) into contiguous ranges, one
// per worker. Each index is handled by exactly one invocation, so kernels that
// write disjoint outputs produce results independent of the worker count.
// Runs inline when a single worker is active.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

} // namespace patchseg
