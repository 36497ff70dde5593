#pragma once

#include <cstddef>
#include <functional>

namespace fpx {

/// Worker cap for kernel-internal parallelism: FPX_THREADS if set and
/// positive, otherwise the hardware concurrency.
std::size_t kernel_threads();

/// Runs body(begin, end) over a partition of [0, n). The partition depends
/// only on n and kernel_threads(), and each index is visited by exactly one
/// worker, so results are deterministic for a fixed thread count. Work below
/// `min_chunk` indices per worker runs inline.
void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace fpx
