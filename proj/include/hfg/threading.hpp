// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace hfg {

// Runs fn(i) for i in [0, count). Work items are distributed round-robin
// over `threads` workers; each item must write only to its own output slot
// so results do not depend on the thread count.
inline void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    int n_workers = std::min(threads, count);
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (int w = 0; w < n_workers; ++w) {
        pool.emplace_back([&, w]() {
            for (int i = w; i < count; i += n_workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

inline int default_threads() {
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? int(hw) : 1;
}

} // namespace hfg
