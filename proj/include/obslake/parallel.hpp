#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>

namespace obslake {

// Execution mode for the data-parallel kernels (workload generation, batch
// canonicalization, multi-segment scans, fingerprinting). The serial mode is
// the reference path; tests assert both modes produce identical results and
// the bench target compares their timings.
enum class ExecMode { serial, parallel };

ExecMode default_exec_mode();
void set_default_exec_mode(ExecMode mode);

int max_threads();

namespace detail {
void parallel_for_impl(size_t n, void (*body)(size_t, void*), void* ctx, ExecMode mode);
}

template <typename Fn>
void parallel_for(size_t n, Fn&& fn, ExecMode mode) {
  auto thunk = +[](size_t i, void* ctx) { (*static_cast<Fn*>(ctx))(i); };
  detail::parallel_for_impl(n, thunk, &fn, mode);
}

template <typename Fn>
void parallel_for(size_t n, Fn&& fn) {
  parallel_for(n, std::forward<Fn>(fn), default_exec_mode());
}

}  // namespace obslake
