#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace nestcl {

// Global worker cap (the CLI's --threads). Defaults to 1; results never
// depend on it because parallel loops only write disjoint outputs.
void set_max_threads(std::size_t n);
std::size_t max_threads();

// Index-chunked parallel loop; fn(i) must write only to slot i outputs.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min(max_threads(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            const std::size_t begin = w * chunk;
            const std::size_t end = std::min(begin + chunk, n);
            try {
                for (std::size_t i = begin; i < end; ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

} // namespace nestcl
