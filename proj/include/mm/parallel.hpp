#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace mm {

// Worker-count knob set by the command line tool's --jobs flag.  Work is
// always partitioned into the same fixed chunks regardless of this value, and
// callers combine per-chunk results in chunk order, so outputs do not depend
// on the number of workers.
namespace detail {
inline int& jobs_slot() {
  static int jobs = 1;
  return jobs;
}
}  // namespace detail

inline int max_jobs() { return detail::jobs_slot(); }
inline void set_max_jobs(int jobs) { detail::jobs_slot() = jobs < 1 ? 1 : jobs; }

// Fixed [lo, hi) partition of [0, n) into chunks of `grain` elements.
inline std::vector<std::pair<std::size_t, std::size_t>> make_chunks(std::size_t n,
                                                                    std::size_t grain) {
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  if (grain == 0) grain = 1;
  for (std::size_t lo = 0; lo < n; lo += grain) {
    chunks.emplace_back(lo, std::min(n, lo + grain));
  }
  return chunks;
}

// Runs fn(chunk_index, lo, hi) over every chunk, using up to max_jobs()
// threads.  Exceptions from workers are rethrown on the calling thread.
inline void parallel_chunks(const std::vector<std::pair<std::size_t, std::size_t>>& chunks,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  const int jobs = max_jobs();
  if (jobs <= 1 || chunks.size() <= 1) {
    for (std::size_t c = 0; c < chunks.size(); ++c) fn(c, chunks[c].first, chunks[c].second);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= chunks.size() || failed.load()) return;
      try {
        fn(c, chunks[c].first, chunks[c].second);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!failed.exchange(true)) error = std::current_exception();
        return;
      }
    }
  };
  const std::size_t n_threads =
      std::min<std::size_t>(static_cast<std::size_t>(jobs), chunks.size());
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Element-wise parallel loop: fn(i) for i in [0, n), deterministic chunking.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                         std::size_t grain = 64) {
  parallel_chunks(make_chunks(n, grain),
                  [&](std::size_t, std::size_t lo, std::size_t hi) {
                    for (std::size_t i = lo; i < hi; ++i) fn(i);
                  });
}

}  // namespace mm
