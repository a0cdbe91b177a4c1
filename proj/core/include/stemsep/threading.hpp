#pragma once

#include <cstdint>
#include <functional>

namespace stemsep {

// Global cap on internal parallelism. Default is the hardware concurrency.
void set_num_threads(int n);
int num_threads();

// Runs fn(begin, end) over a partition of [0, n) across worker threads.
// Every index is processed exactly once by exactly one invocation, so kernels
// that write only to their own output slots stay bit-deterministic for any
// thread count. Small ranges (n < grain) run inline.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn,
                  std::int64_t grain = 1024);

// Scoped override, used by the RTF bench to pin execution to one thread.
struct ThreadCountGuard {
    explicit ThreadCountGuard(int n);
    ~ThreadCountGuard();
    ThreadCountGuard(const ThreadCountGuard&) = delete;
    ThreadCountGuard& operator=(const ThreadCountGuard&) = delete;

  private:
    int saved_;
};

}  // namespace stemsep
