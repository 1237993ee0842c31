// parallel.cpp - worker pool and deterministic reductions.
#include "symreg/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace symreg {

WorkerPool::WorkerPool(int workers) {
    if (workers < 1) throw std::invalid_argument("WorkerPool: workers must be >= 1");
    threads_.reserve(static_cast<size_t>(workers - 1));
    for (int id = 1; id < workers; ++id)
        threads_.emplace_back([this, id] { worker_main(id); });
}

WorkerPool::~WorkerPool() {
    {
        std::lock_guard<std::mutex> lk(mu_);
        stop_ = true;
    }
    cv_start_.notify_all();
    for (auto &t : threads_) t.join();
}

void WorkerPool::run_slice(int slice, int slices, size_t n, const std::function<void(size_t, size_t)> &fn) {
    const size_t per = n / static_cast<size_t>(slices);
    const size_t rem = n % static_cast<size_t>(slices);
    const size_t s = static_cast<size_t>(slice);
    const size_t begin = s * per + std::min(s, rem);
    const size_t end = begin + per + (s < rem ? 1 : 0);
    if (begin < end) fn(begin, end);
}

void WorkerPool::worker_main(int id) {
    uint64_t seen = 0;
    for (;;) {
        const std::function<void(size_t, size_t)> *fn = nullptr;
        size_t n = 0;
        {
            std::unique_lock<std::mutex> lk(mu_);
            cv_start_.wait(lk, [&] { return stop_ || task_.epoch != seen; });
            if (stop_) return;
            seen = task_.epoch;
            fn = task_.fn;
            n = task_.n;
        }
        run_slice(id, worker_count(), n, *fn);
        {
            std::lock_guard<std::mutex> lk(mu_);
            if (--pending_ == 0) cv_done_.notify_all();
        }
    }
}

void WorkerPool::run(size_t n, const std::function<void(size_t, size_t)> &fn) {
    if (n == 0) return;
    if (threads_.empty()) {
        fn(0, n);
        return;
    }
    {
        std::lock_guard<std::mutex> lk(mu_);
        task_.fn = &fn;
        task_.n = n;
        ++task_.epoch;
        pending_ = static_cast<int>(threads_.size());
    }
    cv_start_.notify_all();
    run_slice(0, worker_count(), n, fn);
    {
        std::unique_lock<std::mutex> lk(mu_);
        cv_done_.wait(lk, [&] { return pending_ == 0; });
    }
}

namespace {
std::unique_ptr<WorkerPool> g_pool;
int default_workers() {
    unsigned hc = std::thread::hardware_concurrency();
    if (hc == 0) hc = 1;
    return static_cast<int>(std::min(hc, 8u));
}
} // namespace

WorkerPool &global_pool() {
    if (!g_pool) g_pool = std::make_unique<WorkerPool>(default_workers());
    return *g_pool;
}

void set_worker_count(int workers) {
    g_pool = std::make_unique<WorkerPool>(workers);
}

int worker_count() { return global_pool().worker_count(); }

void parallel_for(size_t n, const std::function<void(size_t, size_t)> &fn) {
    global_pool().run(n, fn);
}

double pairwise_combine(std::vector<double> &partials) {
    if (partials.empty()) return 0.0;
    size_t m = partials.size();
    while (m > 1) {
        const size_t half = (m + 1) / 2;
        for (size_t i = 0; i + half < m; ++i) partials[i] += partials[i + half];
        m = half;
    }
    return partials[0];
}

double deterministic_sum(size_t n, const std::function<double(size_t)> &f) {
    if (n == 0) return 0.0;
    const size_t blocks = (n + kReduceBlock - 1) / kReduceBlock;
    std::vector<double> partials(blocks, 0.0);
    parallel_for(blocks, [&](size_t b0, size_t b1) {
        for (size_t b = b0; b < b1; ++b) {
            const size_t lo = b * kReduceBlock;
            const size_t hi = std::min(lo + kReduceBlock, n);
            double acc = 0.0;
            for (size_t i = lo; i < hi; ++i) acc += f(i);
            partials[b] = acc;
        }
    });
    return pairwise_combine(partials);
}

double deterministic_max(size_t n, const std::function<double(size_t)> &f) {
    if (n == 0) return -HUGE_VAL;
    const size_t blocks = (n + kReduceBlock - 1) / kReduceBlock;
    std::vector<double> partials(blocks, -HUGE_VAL);
    parallel_for(blocks, [&](size_t b0, size_t b1) {
        for (size_t b = b0; b < b1; ++b) {
            const size_t lo = b * kReduceBlock;
            const size_t hi = std::min(lo + kReduceBlock, n);
            double acc = -HUGE_VAL;
            for (size_t i = lo; i < hi; ++i) acc = std::max(acc, f(i));
            partials[b] = acc;
        }
    });
    double out = -HUGE_VAL;
    for (double p : partials) out = std::max(out, p);
    return out;
}

} // namespace symreg
