#ifndef PULSETRACE_DETAIL_PARALLEL_HPP
#define PULSETRACE_DETAIL_PARALLEL_HPP

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#endif

namespace pulsetrace::detail {

// Worker cap: PULSETRACE_THREADS if set, else hardware concurrency.
inline unsigned max_workers() {
  static const unsigned n = [] {
    if (const char* env = std::getenv("PULSETRACE_THREADS")) {
      char* end = nullptr;
      const long v = std::strtol(env, &end, 10);
      if (end != env && v >= 1) return static_cast<unsigned>(v > 256 ? 256 : v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1U : hw;
  }();
  return n;
}

inline void cpu_relax() {
#if defined(__x86_64__) || defined(_M_X64)
  _mm_pause();
#else
  std::this_thread::yield();
#endif
}

// Minimal persistent pool. One dispatcher thread at a time; no nested
// dispatch. Chunk i is executed exactly once; the dispatcher participates.
// Workers spin briefly before sleeping, keeping per-dispatch latency in
// the sub-microsecond range on a busy pipeline.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool(max_workers());
    return pool;
  }

  unsigned size() const { return static_cast<unsigned>(threads_.size()) + 1; }

  void run(std::size_t chunks, const std::function<void(std::size_t)>& fn) {
    if (chunks == 0) return;
    if (threads_.empty() || chunks == 1) {
      for (std::size_t i = 0; i < chunks; ++i) fn(i);
      return;
    }
    {
      std::lock_guard<std::mutex> lk(mutex_);
      fn_ = fn;
      chunks_.store(chunks, std::memory_order_relaxed);
      pending_.store(chunks, std::memory_order_relaxed);
      // Written last: a fetch_add that observes this store also observes
      // fn_ and chunks_ (release/acquire on next_).
      next_.store(0, std::memory_order_release);
      generation_.fetch_add(1, std::memory_order_release);
    }
    wake_cv_.notify_all();
    work();
    for (int spins = 0; pending_.load(std::memory_order_acquire) != 0;
         ++spins) {
      if (spins < kSpinLimit) {
        cpu_relax();
        continue;
      }
      std::unique_lock<std::mutex> lk(mutex_);
      done_cv_.wait(lk, [this] {
        return pending_.load(std::memory_order_acquire) == 0;
      });
      break;
    }
  }

  ~ThreadPool() {
    stop_.store(true, std::memory_order_release);
    wake_cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

 private:
  static constexpr int kSpinLimit = 20000;

  explicit ThreadPool(unsigned workers) {
    for (unsigned i = 1; i < workers; ++i) {
      threads_.emplace_back(&ThreadPool::worker_loop, this);
    }
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      int spins = 0;
      for (;;) {
        if (stop_.load(std::memory_order_acquire)) return;
        if (generation_.load(std::memory_order_acquire) != seen) break;
        if (++spins < kSpinLimit) {
          cpu_relax();
          continue;
        }
        std::unique_lock<std::mutex> lk(mutex_);
        wake_cv_.wait(lk, [&] {
          return stop_.load(std::memory_order_acquire) ||
                 generation_.load(std::memory_order_acquire) != seen;
        });
        if (stop_.load(std::memory_order_acquire)) return;
        break;
      }
      seen = generation_.load(std::memory_order_acquire);
      work();
    }
  }

  void work() {
    const std::size_t chunks = chunks_.load(std::memory_order_acquire);
    for (;;) {
      const std::size_t i = next_.fetch_add(1, std::memory_order_acq_rel);
      if (i >= chunks) return;
      fn_(i);
      if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
        std::lock_guard<std::mutex> lk(mutex_);
        done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mutex_;
  std::condition_variable wake_cv_;
  std::condition_variable done_cv_;
  std::function<void(std::size_t)> fn_;
  std::atomic<std::size_t> next_{0};
  std::atomic<std::size_t> chunks_{0};
  std::atomic<std::size_t> pending_{0};
  std::atomic<std::uint64_t> generation_{0};
  std::atomic<bool> stop_{false};
};

// Splits [0, n) into at most max_workers() contiguous ranges. Each output
// element is produced by exactly one range, so results are bitwise
// independent of the worker count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  if (n == 0) return;
  auto& pool = ThreadPool::instance();
  const std::size_t chunks = std::min<std::size_t>(pool.size(), n);
  if (chunks <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t step = (n + chunks - 1) / chunks;
  pool.run(chunks, [&](std::size_t c) {
    const std::size_t begin = c * step;
    const std::size_t end = std::min(n, begin + step);
    if (begin < end) fn(begin, end);
  });
}

}  // namespace pulsetrace::detail

#endif  // PULSETRACE_DETAIL_PARALLEL_HPP
