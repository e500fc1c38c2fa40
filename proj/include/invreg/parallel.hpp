#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace invreg {

/// Shared worker pool for the compute kernels. Every parallel loop in this
/// library writes disjoint output ranges and performs reductions serially in
/// index order, so results are bitwise independent of the thread count.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    // Runs task(0) .. task(n_tasks-1), using at most max_threads workers
    // (including the calling thread). Blocks until all tasks finished.
    void run(int64_t n_tasks, int max_threads, const std::function<void(int64_t)>& task) {
        if (n_tasks <= 0) return;
        if (max_threads <= 1 || n_tasks == 1 || workers_.empty() || in_worker()) {
            for (int64_t i = 0; i < n_tasks; ++i) task(i);
            return;
        }
        std::lock_guard run_guard(run_mu_);
        {
            std::lock_guard lk(mu_);
            task_ = &task;
            total_ = n_tasks;
            next_.store(0, std::memory_order_relaxed);
            completed_.store(0, std::memory_order_relaxed);
            slots_ = max_threads - 1;
            in_flight_ = true;
            ++generation_;
        }
        cv_work_.notify_all();
        drain(&task);
        // run() may only return once no worker can still be inside this
        // generation's task; active_ tracks participants. A worker that
        // wakes late sees in_flight_ == false and never touches the stale
        // counters of a finished generation.
        std::unique_lock lk(mu_);
        cv_done_.wait(lk, [&] { return completed_.load() == total_ && active_ == 0; });
        in_flight_ = false;
        task_ = nullptr;
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

private:
    ThreadPool() {
        unsigned hw = std::thread::hardware_concurrency();
        int n = std::max(1, (int)hw);
        for (int i = 0; i < n - 1; ++i)
            workers_.emplace_back([this] { worker_loop(); });
    }

    ~ThreadPool() {
        {
            std::lock_guard lk(mu_);
            stop_ = true;
        }
        cv_work_.notify_all();
        for (auto& w : workers_) w.join();
    }

    static bool& in_worker_flag() {
        thread_local bool flag = false;
        return flag;
    }
    static bool in_worker() { return in_worker_flag(); }

    void worker_loop() {
        in_worker_flag() = true;
        uint64_t seen = 0;
        for (;;) {
            const std::function<void(int64_t)>* task = nullptr;
            {
                std::unique_lock lk(mu_);
                cv_work_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                if (!in_flight_ || slots_ <= 0) continue;
                --slots_;
                ++active_;
                task = task_;
            }
            drain(task);
            {
                std::lock_guard lk(mu_);
                --active_;
                if (active_ == 0 && completed_.load() == total_) cv_done_.notify_all();
            }
        }
    }

    void drain(const std::function<void(int64_t)>* task) {
        for (;;) {
            int64_t i = next_.fetch_add(1, std::memory_order_relaxed);
            if (i >= total_) break;
            (*task)(i);
            completed_.fetch_add(1, std::memory_order_release);
        }
    }

    std::vector<std::thread> workers_;
    std::mutex mu_;
    std::mutex run_mu_;
    std::condition_variable cv_work_, cv_done_;
    const std::function<void(int64_t)>* task_ = nullptr;
    int64_t total_ = 0;
    std::atomic<int64_t> next_{0};
    std::atomic<int64_t> completed_{0};
    int slots_ = 0;
    int active_ = 0;
    bool in_flight_ = false;
    uint64_t generation_ = 0;
    bool stop_ = false;
};

inline int default_thread_count() {
    unsigned hw = std::thread::hardware_concurrency();
    return std::clamp((int)hw, 1, 16);
}

inline int& thread_count_slot() {
    static int count = default_thread_count();
    return count;
}

/// Caps internal parallelism; 1 gives strictly serial execution.
inline void set_thread_count(int n) { thread_count_slot() = std::max(1, n); }
inline int thread_count() { return thread_count_slot(); }

/// body(begin, end) over a partition of [0, n). Chunk boundaries depend only
/// on n and the configured thread count, never on scheduling.
inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
    if (n <= 0) return;
    int nt = thread_count();
    if (nt <= 1 || n < 2) {
        body(0, n);
        return;
    }
    int64_t chunks = std::min<int64_t>(n, (int64_t)nt * 4);
    int64_t chunk = (n + chunks - 1) / chunks;
    ThreadPool::instance().run(chunks, nt, [&](int64_t ci) {
        int64_t b = ci * chunk;
        int64_t e = std::min(n, b + chunk);
        if (b < e) body(b, e);
    });
}

/// body(i) for i in [0, n), one task per index. Used where the natural task
/// is a whole channel or line.
inline void parallel_for_each(int64_t n, const std::function<void(int64_t)>& body) {
    if (n <= 0) return;
    int nt = thread_count();
    if (nt <= 1 || n < 2) {
        for (int64_t i = 0; i < n; ++i) body(i);
        return;
    }
    ThreadPool::instance().run(n, nt, body);
}

}  // namespace invreg
