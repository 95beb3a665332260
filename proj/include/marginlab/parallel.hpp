#pragma once

#include <cstddef>
#include <functional>

namespace marginlab {

/// Worker count from MARGINLAB_THREADS (unset or invalid: 1).
std::size_t default_jobs();

/// Clamps a requested job count to [1, MARGINLAB_THREADS cap].
std::size_t effective_jobs(std::size_t requested);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Callers write results
/// into per-index slots, so output order never depends on scheduling. The
/// first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace marginlab
