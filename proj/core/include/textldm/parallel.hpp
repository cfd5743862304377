#ifndef TEXTLDM_PARALLEL_HPP
#define TEXTLDM_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace tldm {

/// Worker-thread cap: min(hardware threads, 8), overridable by the
/// TLDM_THREADS environment variable (values < 1 are clamped to 1).
int worker_thread_count();

/// Runs fn(i) for i in [0, n) across worker threads. Results must be written
/// to per-index slots so that any later reduction can run in index order;
/// that keeps numerics independent of both scheduling and thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace tldm

#endif  // TEXTLDM_PARALLEL_HPP
