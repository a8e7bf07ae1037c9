#include "obslake/parallel.hpp"

#include <atomic>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace obslake {

namespace {

std::atomic<ExecMode> g_mode{ExecMode::parallel};

}  // namespace

ExecMode default_exec_mode() { return g_mode.load(std::memory_order_relaxed); }

void set_default_exec_mode(ExecMode mode) { g_mode.store(mode, std::memory_order_relaxed); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace detail {

void parallel_for_impl(size_t n, void (*body)(size_t, void*), void* ctx, ExecMode mode) {
#ifdef _OPENMP
  if (mode == ExecMode::parallel && n > 1) {
    #pragma omp parallel for schedule(dynamic, 1)
    for (int64_t i = 0; i < static_cast<int64_t>(n); ++i) {
      body(static_cast<size_t>(i), ctx);
    }
    return;
  }
#else
  (void)mode;
#endif
  for (size_t i = 0; i < n; ++i) body(i, ctx);
}

}  // namespace detail

}  // namespace obslake
