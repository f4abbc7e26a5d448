#ifndef POLYFOLIO_PARALLEL_HPP
#define POLYFOLIO_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace polyfolio {

/// Runs body(i) for i in [0, n) on up to `threads` workers. Work is handed
/// out dynamically, so body must write only to slot i of whatever it fills.
/// The first exception thrown by any worker is rethrown on the caller.
template <typename Body>
void parallel_for(std::size_t n, unsigned threads, Body&& body) {
    threads = std::max(1u, threads);
    if (threads == 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(n);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    unsigned count = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    pool.reserve(count);
    for (unsigned t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

/// Maps f over [0, n) into a vector, order preserved.
template <typename F>
auto parallel_map(std::size_t n, unsigned threads, F&& f) {
    using R = decltype(f(std::size_t{0}));
    std::vector<R> out(n);
    parallel_for(n, threads, [&](std::size_t i) { out[i] = f(i); });
    return out;
}

} // namespace polyfolio

#endif
