#include "stemsep/threading.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace stemsep {

namespace {
std::atomic<int> g_threads{0};  // 0 = uninitialized

int hardware_threads() {
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}
}  // namespace

void set_num_threads(int n) {
    g_threads.store(std::max(1, n));
}

int num_threads() {
    int n = g_threads.load();
    if (n == 0) {
        n = hardware_threads();
        g_threads.store(n);
    }
    return n;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn,
                  std::int64_t grain) {
    if (n <= 0) return;
    const int nt = num_threads();
    if (nt <= 1 || n < 2 * grain) {
        fn(0, n);
        return;
    }
    const int workers = static_cast<int>(std::min<std::int64_t>(nt, (n + grain - 1) / grain));
    const std::int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers) - 1);
    for (int w = 1; w < workers; ++w) {
        const std::int64_t b = w * chunk;
        const std::int64_t e = std::min<std::int64_t>(n, b + chunk);
        if (b >= e) break;
        threads.emplace_back([&fn, b, e] { fn(b, e); });
    }
    fn(0, std::min<std::int64_t>(n, chunk));
    for (auto& t : threads) t.join();
}

ThreadCountGuard::ThreadCountGuard(int n) : saved_(num_threads()) {
    set_num_threads(n);
}

ThreadCountGuard::~ThreadCountGuard() {
    set_num_threads(saved_);
}

}  // namespace stemsep
