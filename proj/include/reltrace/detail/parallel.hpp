#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <optional>
#include <thread>
#include <vector>

namespace reltrace {

template <typename Fn>
auto parallel_map(std::size_t count, std::uint32_t workers, Fn&& fn) -> std::vector<decltype(fn(std::size_t{}))> {
    using R = decltype(fn(std::size_t{}));
    std::vector<std::optional<R>> slots(count);
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                slots[i].emplace(fn(i));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::min<std::size_t>(workers == 0 ? 1 : workers, count);
    if (n_threads <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < n_threads; ++w) {
            pool.emplace_back(work);
        }
    }
    std::vector<R> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (errors[i]) {
            std::rethrow_exception(errors[i]);
        }
        out.push_back(std::move(*slots[i]));
    }
    return out;
}

}  // namespace reltrace
