#pragma once

#include <cstdint>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace diffgen {

/// Parallel loop over independent iterations. Each iteration must write
/// disjoint memory; under that contract results are bit-identical to the
/// sequential loop for any thread count.
template <typename F>
void parallel_for(std::int64_t n, F&& fn) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) fn(i);
#else
    for (std::int64_t i = 0; i < n; ++i) fn(i);
#endif
}

}  // namespace diffgen
