#pragma once

// MULAN_THREADS caps the worker count for per-example evaluation loops.
// Work items are independent and write disjoint slots, so the result is
// identical at any thread count.

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace mulan {

inline int env_thread_cap() {
    const char* s = std::getenv("MULAN_THREADS");
    if (!s) return 1;
    int v = std::atoi(s);
    return v < 1 ? 1 : v;
}

template <class Fn>
void parallel_for(int n, int nthreads, Fn&& fn) {
    if (nthreads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&] {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= n) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    int count = std::min(nthreads, n);
    pool.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

}  // namespace mulan
