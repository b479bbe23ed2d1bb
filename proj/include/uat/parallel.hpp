#pragma once

#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace uat {

enum class Execution { serial, parallel };

/// Sets the OpenMP team size. Chunk boundaries never depend on this value,
/// so results are identical for any thread count.
inline void set_thread_count(int threads) {
#ifdef _OPENMP
    if (threads > 0) {
        omp_set_num_threads(threads);
    }
#else
    (void)threads;
#endif
}

inline int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

/// Calls fn(begin, end, chunk_index) over [0, n) split into fixed-size chunks.
/// Chunks are disjoint; fn must only write state owned by its chunk.
template <typename Fn>
void for_each_chunk(std::size_t n, std::size_t chunk, Execution exec, Fn&& fn) {
    if (n == 0) {
        return;
    }
    const std::size_t count = (n + chunk - 1) / chunk;
    if (exec == Execution::parallel && count > 1) {
#pragma omp parallel for schedule(dynamic, 1)
        for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(count); ++c) {
            const std::size_t begin = static_cast<std::size_t>(c) * chunk;
            const std::size_t end = begin + chunk < n ? begin + chunk : n;
            fn(begin, end, static_cast<std::size_t>(c));
        }
    } else {
        for (std::size_t c = 0; c < count; ++c) {
            const std::size_t begin = c * chunk;
            const std::size_t end = begin + chunk < n ? begin + chunk : n;
            fn(begin, end, c);
        }
    }
}

/// Per-index map; out[i] = fn(i). Deterministic for any thread count.
template <typename T, typename Fn>
std::vector<T> parallel_map(std::size_t n, Execution exec, Fn&& fn) {
    std::vector<T> out(n);
    for_each_chunk(n, 1, exec, [&](std::size_t b, std::size_t, std::size_t) { out[b] = fn(b); });
    return out;
}

}  // namespace uat
