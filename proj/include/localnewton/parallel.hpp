#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace localnewton {

// Runs body(i) for i in [0, count). With threads <= 1 the loop is serial.
// Each index must touch only its own output slot; the first exception (by
// thread index) is rethrown after all threads join, so failures are
// deterministic regardless of scheduling.
template <class Body>
void parallel_for(std::size_t count, int threads, const Body& body) {
    if (count == 0) return;
    const std::size_t nthreads =
        std::min<std::size_t>(count, threads <= 1 ? 1 : static_cast<std::size_t>(threads));
    if (nthreads == 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(nthreads);
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    const std::size_t chunk = (count + nthreads - 1) / nthreads;
    for (std::size_t t = 0; t < nthreads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(count, lo + chunk);
        pool.emplace_back([&, t, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) body(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace localnewton
