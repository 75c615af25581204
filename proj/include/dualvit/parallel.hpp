#pragma once

#include <cstddef>
#include <functional>

namespace dualvit {

// Worker count: hardware concurrency, capped by DUALVIT_THREADS when set.
std::size_t worker_threads();
void set_worker_threads(std::size_t count);

// Splits [0, count) into contiguous chunks, one per worker. Each index is
// handled by exactly one worker, so per-index results do not depend on the
// thread count. Runs inline when work < min_work.
void parallel_for(std::size_t count, std::size_t min_work, std::size_t work_per_index,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace dualvit
