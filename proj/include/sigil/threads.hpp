#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace sigil {

// Index-parallel loop. Each index runs single-threaded; callers store results
// into per-index slots and reduce sequentially afterwards, so outcomes do not
// depend on the thread count.
inline void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& fn) {
    if (threads <= 0) {
        threads = (int)std::thread::hardware_concurrency();
    }
    threads = (int)std::min<int64_t>(threads, n);
    if (threads <= 1) {
        for (int64_t i = 0; i < n; i++) {
            fn(i);
        }
        return;
    }
    std::atomic<int64_t> next(0);
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    pool.reserve((size_t)threads);
    for (int w = 0; w < threads; w++) {
        pool.emplace_back([&]() {
            while (true) {
                int64_t i = next.fetch_add(1);
                if (i >= n) {
                    return;
                }
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) {
                        error = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& th : pool) {
        th.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

}  // namespace sigil
