// parallel.hpp - worker pool and worker-count-invariant reductions.
//
// All heavy loops in this project go through parallel_for / deterministic_sum.
// Work is partitioned into fixed-size blocks whose boundaries depend only on the
// problem size, never on the worker count, and block reductions are combined in
// a fixed pairwise tree.  As a result every numeric output is bit-identical
// whether the pool runs 1, 4, or 8 workers.
#pragma once

#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace symreg {

class WorkerPool {
  public:
    explicit WorkerPool(int workers);
    ~WorkerPool();

    WorkerPool(const WorkerPool &) = delete;
    WorkerPool &operator=(const WorkerPool &) = delete;

    int worker_count() const { return static_cast<int>(threads_.size()) + 1; }

    // Runs fn(begin, end) over [0, n) split into worker_count() contiguous slices.
    // The slice boundaries depend only on n and worker count; per-element work must
    // be independent, so the arithmetic performed is identical for any worker count.
    void run(size_t n, const std::function<void(size_t, size_t)> &fn);

  private:
    struct Task {
        const std::function<void(size_t, size_t)> *fn = nullptr;
        size_t n = 0;
        uint64_t epoch = 0;
    };

    void worker_main(int id);
    void run_slice(int slice, int slices, size_t n, const std::function<void(size_t, size_t)> &fn);

    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::condition_variable cv_start_, cv_done_;
    Task task_;
    uint64_t epoch_ = 0;
    int pending_ = 0;
    bool stop_ = false;
};

// Process-wide pool.  set_worker_count() tears down and rebuilds the pool; it is
// intended to be called once at startup (e.g. from the CLI --threads flag).
WorkerPool &global_pool();
void set_worker_count(int workers);
int worker_count();

// Parallel loop over [0, n).
void parallel_for(size_t n, const std::function<void(size_t, size_t)> &fn);

// Fixed-topology pairwise-tree sum of f(i) over [0, n).  Leaves are contiguous
// blocks of kReduceBlock elements summed left to right; block sums are combined
// pairwise.  The tree shape depends only on n, so the result is bit-identical
// for any worker count.
inline constexpr size_t kReduceBlock = 4096;

double deterministic_sum(size_t n, const std::function<double(size_t)> &f);

// Max-reduction over [0, n).  max is exactly associative so ordering does not
// matter, but the same fixed blocking is used for symmetry.
double deterministic_max(size_t n, const std::function<double(size_t)> &f);

// Combines per-block partial sums pairwise; exposed for reuse by custom reductions.
double pairwise_combine(std::vector<double> &partials);

} // namespace symreg
