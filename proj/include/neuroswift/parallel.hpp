#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace neuroswift {

// Worker count from NEUROSWIFT_THREADS; default 1 keeps runs single-threaded.
inline std::size_t worker_count() {
    const char* env = std::getenv("NEUROSWIFT_THREADS");
    if (!env) return 1;
    const long n = std::strtol(env, nullptr, 10);
    if (n < 1) return 1;
    return static_cast<std::size_t>(n);
}

// Index-parallel loop with deterministic output: workers own disjoint index
// ranges and each index writes only its own slot, so results are identical
// for any worker count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    const std::size_t workers = std::min(worker_count(), n == 0 ? std::size_t(1) : n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace neuroswift
