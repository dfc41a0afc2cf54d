#pragma once

#include <cstddef>
#include <functional>

namespace gtalk {

// Global cap on worker threads. Defaults to the number of available cores.
void set_thread_count(std::size_t n);
std::size_t thread_count();

// Runs fn(begin, end, worker) over [0, n) split into contiguous chunks, one per
// worker. Chunk boundaries depend only on n and the thread count, so per-worker
// reductions are reproducible for a fixed thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

} // namespace gtalk
