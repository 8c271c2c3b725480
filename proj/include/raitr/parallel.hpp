#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace raitr {

namespace detail {
inline thread_local bool inside_parallel_region = false;
}

/// Runs task(i) for i in [0, count) on a small thread pool. Tasks must write
/// to disjoint outputs. The exception from the lowest failing index is rethrown.
/// Nested calls run serially on the calling worker.
template <typename Task>
void parallel_for(std::size_t count, Task&& task, std::size_t max_threads = 0) {
    if (count == 0) return;
    std::size_t threads = max_threads ? max_threads : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, count);
    if (detail::inside_parallel_region) threads = 1;
    std::vector<std::exception_ptr> errors(count);
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            try {
                task(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                detail::inside_parallel_region = true;
                for (std::size_t i = next++; i < count; i = next++) {
                    try {
                        task(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace raitr
