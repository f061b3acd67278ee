#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace eitdiff {

// Runs fn(i) for i in [begin, end) on up to `threads` workers. Each index is
// handled by exactly one worker; results must be written to disjoint slots.
inline void parallel_for(std::size_t begin, std::size_t end, int threads, const std::function<void(std::size_t)>& fn) {
    const std::size_t n = end - begin;
    const auto workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1 || n <= 1) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = begin + w; i < end; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace eitdiff
