#pragma once

#include <cstddef>
#include <cstdint>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace roughflow {

/// Number of worker threads used by pointwise loops. Reductions are always
/// performed serially in a fixed order, so results do not depend on this.
inline int thread_count() {
#if defined(_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_thread_count(int threads) {
#if defined(_OPENMP)
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

/// Runs body(i) for i in [0, count). Iterations must write disjoint outputs.
/// Loops of at most serial_below iterations stay on the calling thread.
template <class Body>
void parallel_for(std::int64_t count, Body&& body, std::int64_t serial_below = 4096) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) if (count > serial_below)
  for (std::int64_t i = 0; i < count; ++i) body(i);
#else
  (void)serial_below;
  for (std::int64_t i = 0; i < count; ++i) body(i);
#endif
}

}  // namespace roughflow
