#pragma once

#include <cstdint>
#include <functional>

namespace taperkit {

// Worker cap resolved from the TAPERKIT_THREADS environment variable.
// Unset or invalid falls back to the hardware count; 0 or 1 means serial.
int worker_count();

// Run fn(i) for i in [0, n). Work is split into contiguous chunks, one per
// worker. Each index must write only state owned by that index, which keeps
// results identical to the serial order at any worker count.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace taperkit
