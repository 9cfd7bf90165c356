// SPDX-License-Identifier: Apache-2.0
//
// Deterministic parallel-for over an index range. Worker count comes from
// XMODAL_THREADS (default 1); results land in caller-owned slots so ordering
// never depends on scheduling.

#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace xmodal {

inline int worker_thread_count() {
    const char* env = std::getenv("XMODAL_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

template <typename Fn>
void parallel_for(std::size_t count, Fn fn) {
    const int threads = worker_thread_count();
    if (threads <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(threads), count);
    for (std::size_t w = 0; w < n_threads; ++w) {
        pool.emplace_back([w, n_threads, count, &fn] {
            for (std::size_t i = w; i < count; i += n_threads) fn(i);
        });
    }
    for (std::thread& t : pool) t.join();
}

}  // namespace xmodal
