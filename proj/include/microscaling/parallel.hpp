#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace microscaling {

namespace detail {
inline std::atomic<unsigned>& thread_setting() {
    static std::atomic<unsigned> n{1};
    return n;
}
}  // namespace detail

/// 0 selects the hardware concurrency.
inline void set_num_threads(unsigned n) { detail::thread_setting() = n; }

inline unsigned num_threads() {
    const unsigned n = detail::thread_setting();
    return n == 0 ? std::max(1u, std::thread::hardware_concurrency()) : n;
}

/// Calls f(begin, end) on contiguous, disjoint chunks of [0, n). Every index
/// is handled by exactly one call, so results do not depend on the thread
/// count as long as f writes only to outputs owned by its indices.
template <class F>
void parallel_for(std::size_t n, F&& f) {
    const std::size_t k = std::min<std::size_t>(num_threads(), n);
    if (k <= 1) {
        if (n) f(std::size_t{0}, n);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(k);
    pool.reserve(k - 1);
    const auto run = [&](std::size_t part) {
        try {
            f(n * part / k, n * (part + 1) / k);
        } catch (...) {
            errors[part] = std::current_exception();
        }
    };
    for (std::size_t part = 1; part < k; ++part) pool.emplace_back(run, part);
    run(0);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace microscaling
