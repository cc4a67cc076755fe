#pragma once
#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace sad {

// Runs fn(stripe) for stripe in [0, stripes). Stripes are claimed with an
// atomic counter; callers that need a deterministic reduction keep one output
// buffer per stripe (or per worker with a fixed worker count) and merge in
// index order afterwards.
inline void run_stripes(int stripes, int threads, const std::function<void(int)>& fn) {
    if (stripes <= 0) return;
    if (threads <= 1 || stripes == 1) {
        for (int i = 0; i < stripes; i++) fn(i);
        return;
    }
    int nt = threads < stripes ? threads : stripes;
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(nt);
    for (int w = 0; w < nt; w++) {
        pool.emplace_back([&] {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= stripes) break;
                fn(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

// Same claiming scheme but fn also receives a stable worker index in
// [0, worker_count(stripes, threads)) so each worker can own a private
// reduction buffer; merge the buffers in worker order for reproducibility.
inline int worker_count(int stripes, int threads) {
    if (stripes <= 0) return 0;
    if (threads <= 1 || stripes == 1) return 1;
    return threads < stripes ? threads : stripes;
}

inline void run_stripes_workers(int stripes, int threads,
                                const std::function<void(int, int)>& fn) {
    if (stripes <= 0) return;
    int nt = worker_count(stripes, threads);
    if (nt == 1) {
        for (int i = 0; i < stripes; i++) fn(0, i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(nt);
    for (int w = 0; w < nt; w++) {
        pool.emplace_back([&, w] {
            for (;;) {
                int i = next.fetch_add(1);
                if (i >= stripes) break;
                fn(w, i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace sad
