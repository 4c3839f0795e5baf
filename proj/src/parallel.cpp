#include "dcls/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace dcls {

namespace {

int env_default() {
    const char* env = std::getenv("DCLS_WORKERS");
    if (env == nullptr) return 1;
    int n = std::atoi(env);
    return n >= 1 ? n : 1;
}

std::atomic<int> g_workers{0};  // 0 = not initialized yet

}  // namespace

int num_workers() {
    int n = g_workers.load(std::memory_order_relaxed);
    if (n == 0) {
        n = env_default();
        g_workers.store(n, std::memory_order_relaxed);
    }
    return n;
}

void set_num_workers(int n) {
    g_workers.store(n >= 1 ? n : 1, std::memory_order_relaxed);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t workers = static_cast<std::size_t>(num_workers());
    if (workers <= 1 || n == 1) {
        fn(0, n);
        return;
    }
    const std::size_t active = std::min(workers, n);
    const std::size_t chunk = (n + active - 1) / active;

    std::exception_ptr error;
    std::atomic<bool> failed{false};
    auto run = [&](std::size_t begin, std::size_t end) {
        try {
            fn(begin, end);
        } catch (...) {
            if (!failed.exchange(true)) error = std::current_exception();
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(active - 1);
    for (std::size_t w = 1; w < active; ++w) {
        std::size_t begin = w * chunk;
        std::size_t end = std::min(begin + chunk, n);
        if (begin >= end) break;
        pool.emplace_back(run, begin, end);
    }
    run(0, std::min(chunk, n));
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace dcls
