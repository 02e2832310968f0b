#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace mseg {

// Number of worker threads used by parallel_for. 0 = hardware concurrency.
void set_num_threads(int n);
int num_threads();

// Static partition of [0, count) into contiguous chunks, one per worker.
// Chunk boundaries depend only on `count` and the worker count, so writes to
// disjoint outputs are deterministic. Runs inline when count is small.
void parallel_for(std::int64_t count, const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace mseg
