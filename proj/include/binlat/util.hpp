#pragma once

#include <cmath>
#include <cstdint>
#include <thread>
#include <vector>

namespace binlat {

// standard normal cdf; erfc keeps full double accuracy in both tails
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Deterministic chunked parallel reduction: the index range is split into
// fixed-size chunks, each chunk is summed in index order, and chunk partials
// are combined in chunk order.  Results are bitwise identical for any thread
// count.
template <typename Acc, typename InitFn, typename BodyFn>
Acc parallel_chunk_sum(std::int64_t n, InitFn make_zero, BodyFn body, int threads,
                       std::int64_t chunk_size = 1024) {
  threads = resolve_threads(threads);
  const std::int64_t n_chunks = (n + chunk_size - 1) / chunk_size;
  std::vector<Acc> partials;
  partials.reserve(static_cast<std::size_t>(n_chunks));
  for (std::int64_t c = 0; c < n_chunks; ++c) partials.push_back(make_zero());
  if (threads <= 1 || n_chunks <= 1) {
    for (std::int64_t c = 0; c < n_chunks; ++c) {
      const std::int64_t lo = c * chunk_size;
      const std::int64_t hi = std::min(n, lo + chunk_size);
      for (std::int64_t i = lo; i < hi; ++i) body(i, partials[static_cast<std::size_t>(c)]);
    }
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&, w]() {
        for (std::int64_t c = w; c < n_chunks; c += threads) {
          const std::int64_t lo = c * chunk_size;
          const std::int64_t hi = std::min(n, lo + chunk_size);
          for (std::int64_t i = lo; i < hi; ++i)
            body(i, partials[static_cast<std::size_t>(c)]);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  Acc total = make_zero();
  for (auto& part : partials) total += part;
  return total;
}

}  // namespace binlat
