#pragma once

#include <cstdint>
#include <functional>

namespace phyg {

// Worker count used when a config leaves threads at 0. Reads PHYG_THREADS,
// falling back to the hardware concurrency.
int default_thread_count();

// Runs fn(worker, begin, end) over a static contiguous partition of [0, n).
// Work items must derive any randomness from their own index so the result
// is independent of the partitioning; callers reduce per-range results in
// index order to stay bit-identical with a serial run.
void parallel_ranges(std::int64_t n, int threads,
                     const std::function<void(int, std::int64_t, std::int64_t)>& fn);

}  // namespace phyg
