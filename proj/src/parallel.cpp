#include "phyg/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace phyg {

int default_thread_count() {
    if (const char* env = std::getenv("PHYG_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_ranges(std::int64_t n, int threads,
                     const std::function<void(int, std::int64_t, std::int64_t)>& fn) {
    if (n <= 0) return;
    if (threads <= 0) threads = default_thread_count();
    threads = static_cast<int>(std::min<std::int64_t>(threads, n));
    if (threads == 1) {
        fn(0, 0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads - 1));
    const std::int64_t base = n / threads;
    const std::int64_t extra = n % threads;
    std::int64_t begin = 0;
    std::exception_ptr error;
    std::vector<std::pair<std::int64_t, std::int64_t>> ranges;
    for (int t = 0; t < threads; ++t) {
        std::int64_t len = base + (t < extra ? 1 : 0);
        ranges.emplace_back(begin, begin + len);
        begin += len;
    }
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    for (int t = 1; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                fn(t, ranges[static_cast<std::size_t>(t)].first,
                   ranges[static_cast<std::size_t>(t)].second);
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        });
    }
    try {
        fn(0, ranges[0].first, ranges[0].second);
    } catch (...) {
        errors[0] = std::current_exception();
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace phyg
