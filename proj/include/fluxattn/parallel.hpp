#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace fluxattn {

inline int effective_threads(int requested) {
    int n = requested > 0 ? requested : int(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char* cap = std::getenv("FLUXATTN_THREADS")) {
        const int c = std::atoi(cap);
        if (c > 0 && c < n) n = c;
    }
    return n;
}

/// Fork-join over [0, n): deterministic chunking, results written to
/// caller-owned slots by index.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    const int t = effective_threads(threads);
    if (t <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t workers = std::min<std::size_t>(std::size_t(t), n);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

} // namespace fluxattn
