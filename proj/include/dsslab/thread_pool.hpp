#pragma once

/// Static-partition parallel_for. Each index writes to its own output slot
/// and reductions happen sequentially in the caller, so results are
/// byte-identical for every worker count.

#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "dsslab/common.hpp"

namespace dsslab {

/// Default worker count: DSSLAB_THREADS env var, else hardware concurrency.
inline int default_thread_count() {
    if (const char* env = std::getenv("DSSLAB_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return int(v);
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? int(hc) : 1;
}

class ThreadPool {
  public:
    explicit ThreadPool(int n_threads) : n_(n_threads < 1 ? 1 : n_threads) {}

    int size() const { return n_; }

    /// Runs fn(i) for i in [0,n). Contiguous static partition per worker;
    /// fn must only write state owned by index i.
    void parallel_for(size_t n, const std::function<void(size_t)>& fn) const {
        if (n == 0) return;
        if (n_ == 1 || n == 1) {
            for (size_t i = 0; i < n; ++i) fn(i);
            return;
        }
        size_t workers = std::min<size_t>(n_, n);
        std::vector<std::thread> ts;
        ts.reserve(workers);
        std::exception_ptr first_error;
        std::mutex err_mutex;
        for (size_t w = 0; w < workers; ++w) {
            size_t b = n * w / workers, e = n * (w + 1) / workers;
            ts.emplace_back([&, b, e] {
                try {
                    for (size_t i = b; i < e; ++i) fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            });
        }
        for (auto& t : ts) t.join();
        if (first_error) std::rethrow_exception(first_error);
    }

  private:
    int n_;
};

}  // namespace dsslab
