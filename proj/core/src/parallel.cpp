#include "textldm/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

#ifdef TEXTLDM_USE_CBLAS
extern "C" void openblas_set_num_threads(int);
#endif

namespace tldm {

namespace {

int resolve_thread_count() {
#ifdef TEXTLDM_USE_CBLAS
  // We parallelize across batch samples ourselves; nested BLAS threading
  // would oversubscribe and make reductions timing-dependent inside a call.
  openblas_set_num_threads(1);
#endif
  unsigned hw = std::thread::hardware_concurrency();
  int n = static_cast<int>(std::min<unsigned>(hw == 0 ? 1 : hw, 8));
  if (const char* env = std::getenv("TLDM_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) n = v;
  }
  return std::max(n, 1);
}

}  // namespace

int worker_thread_count() {
  static const int count = resolve_thread_count();
  return count;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  const int threads = std::min<std::size_t>(static_cast<std::size_t>(worker_thread_count()), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load(std::memory_order_relaxed)) break;
      try {
        fn(i);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
        break;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads) - 1);
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace tldm
