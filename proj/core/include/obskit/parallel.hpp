#pragma once

#include <cstddef>
#include <cstdlib>
#include <thread>
#include <vector>

namespace obskit {

/// Default worker count: OBSKIT_THREADS if set, else 1 (serial).
inline unsigned default_threads() {
    if (const char* env = std::getenv("OBSKIT_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    return 1;
}

/// Runs fn(begin, end) over a partition of [0, n). With threads <= 1 the
/// call is a plain loop on the calling thread. Chunks are contiguous so
/// callers can assume cache-friendly ranges.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    if (n == 0) return;
    if (threads <= 1 || n == 1) {
        fn(std::size_t{0}, n);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(threads, n);
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace obskit
