#pragma once

#include <cstddef>
#include <functional>

namespace cyclemap {

/// Worker count: CYCLEMAP_THREADS if set (>= 1), otherwise the hardware
/// concurrency. set_thread_count overrides both for the process.
int thread_count();
void set_thread_count(int n);

/// Runs body(i) for i in [0, n) on up to thread_count() threads with static
/// contiguous chunks. Every index is processed exactly once, so results that
/// are written per index are independent of the thread count. A call from
/// inside a worker runs serially.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace cyclemap
