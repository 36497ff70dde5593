#include "fpx/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace fpx {

std::size_t kernel_threads() {
  static const std::size_t cached = [] {
    if (const char* env = std::getenv("FPX_THREADS")) {
      try {
        const long v = std::stol(env);
        if (v > 0) return static_cast<std::size_t>(v);
      } catch (const std::exception&) {
      }
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
  }();
  return cached;
}

void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  const std::size_t workers =
      std::min(kernel_threads(), std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_chunk)));
  if (workers <= 1) {
    body(0, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  body(0, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace fpx
