#pragma once

// Runs independent jobs on a bounded pool. Jobs never share tapes or parameters, so results do
// not depend on the worker count.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace ccdn {

/// Worker cap from CCDN_THREADS, else the hardware concurrency (at least 1).
inline std::size_t worker_count() {
    if (const char* env = std::getenv("CCDN_THREADS")) {
        try {
            const long n = std::stol(env);
            if (n >= 1) return static_cast<std::size_t>(n);
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls job(i) for i in [0, n) on up to `workers` threads; rethrows the first failure.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& job, std::size_t workers = worker_count()) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    job(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace ccdn
