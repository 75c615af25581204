#include "dualvit/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace dualvit {

namespace {

std::size_t default_threads() {
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("DUALVIT_THREADS")) {
        try {
            const long cap = std::stol(env);
            if (cap >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
        } catch (const std::exception&) {
            // unparsable value: ignore the cap
        }
    }
    return n;
}

std::atomic<std::size_t>& thread_setting() {
    static std::atomic<std::size_t> value{default_threads()};
    return value;
}

}  // namespace

std::size_t worker_threads() { return thread_setting().load(); }

void set_worker_threads(std::size_t count) { thread_setting().store(std::max<std::size_t>(1, count)); }

void parallel_for(std::size_t count, std::size_t min_work, std::size_t work_per_index,
                  const std::function<void(std::size_t, std::size_t)>& body) {
    const std::size_t workers = std::min(worker_threads(), count);
    if (workers <= 1 || count * work_per_index < min_work) {
        body(0, count);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    const std::size_t chunk = (count + workers - 1) / workers;
    for (std::size_t w = 1; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(count, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&body, begin, end] { body(begin, end); });
    }
    body(0, std::min(count, chunk));
}

}  // namespace dualvit
