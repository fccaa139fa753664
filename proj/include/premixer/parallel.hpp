#pragma once

#include <cstddef>
#include <functional>

namespace premixer {

/// Worker count for intra-op parallelism. Read once from PREMIXER_THREADS
/// (default 1); set_thread_count overrides it.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Splits [0, n) into contiguous chunks of at least `grain` items and runs
/// fn(begin, end) on each, one chunk per worker. Callers must only write
/// disjoint outputs per index so that results are independent of the split.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace premixer
