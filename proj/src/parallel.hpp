#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace tiltcal::detail {

/// Runs f(i) for i in [0, n) over contiguous chunks. Results must be written
/// to per-index slots; any reduction happens afterwards in index order so
/// the outcome does not depend on the worker count.
template <class F>
void parallel_for(std::size_t n, int workers, F&& f, std::size_t min_chunk = 1024) {
    const std::size_t threads =
        std::min<std::size_t>(workers > 1 ? static_cast<std::size_t>(workers) : 1, (n + min_chunk - 1) / min_chunk);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                const std::size_t end = std::min(n, (t + 1) * chunk);
                for (std::size_t i = t * chunk; i < end; ++i) f(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace tiltcal::detail
