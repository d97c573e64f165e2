#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace fflow {

/// Physical cores are not portable to query; hardware_concurrency is the
/// closest standard answer.
inline unsigned default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Runs task(i) for i in [0, count) on up to `workers` threads. Tasks write
/// to their own output slots, so the result never depends on the schedule.
/// If any task throws, the exception of the lowest failing index is
/// rethrown after all threads finish.
template <typename Task>
void parallel_for(std::size_t count, unsigned workers, Task &&task) {
    std::vector<std::exception_ptr> errors(count);
    auto run = [&](std::size_t i) {
        try {
            task(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    const unsigned threads = static_cast<unsigned>(std::min<std::size_t>(std::max(workers, 1u), count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) {
            run(i);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (unsigned w = 0; w < threads; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
                    run(i);
                }
            });
        }
    }
    for (auto &e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

}  // namespace fflow
