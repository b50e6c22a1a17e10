#pragma once

#include <cstdint>
#include <functional>

namespace glyphcrm {

// Number of kernel worker threads. Defaults to the hardware concurrency,
// capped by the GLYPHCRM_THREADS environment variable (read once).
int worker_count();

// Runs body(begin, end) over a partition of [0, n). Each index is visited
// by exactly one invocation, so kernels that write disjoint outputs are
// bitwise independent of the thread count. Nested calls run inline.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace glyphcrm
