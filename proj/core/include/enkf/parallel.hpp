#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace enkf {

/// Worker count used by member-level loops (default 1).
void set_thread_count(int n);
int thread_count() noexcept;

/// Runs body(i) for i in [0, n). Iterations must only write to slot i, which
/// keeps results independent of the thread count.
template <class Body>
void parallel_for(std::ptrdiff_t n, Body&& body)
{
    const int workers = static_cast<int>(std::min<std::ptrdiff_t>(thread_count(), n));
    if (workers <= 1) {
        for (std::ptrdiff_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const std::ptrdiff_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const std::ptrdiff_t lo = w * chunk;
        const std::ptrdiff_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
            try {
                for (std::ptrdiff_t i = lo; i < hi; ++i) body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    pool.clear();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace enkf
