#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace deepsketch {

inline std::size_t default_thread_count() { return std::max(1U, std::thread::hardware_concurrency()); }

/// Runs fn(i) for i in [begin, end) on `threads` workers with a static
/// interleaved assignment. Results must be written by index; the first
/// exception (by worker order) is rethrown after all workers join.
template <typename F>
void parallel_for(std::size_t begin, std::size_t end, std::size_t threads, F&& fn) {
  if (end <= begin) return;
  threads = std::clamp<std::size_t>(threads, 1, end - begin);
  if (threads == 1) {
    for (auto i = begin; i < end; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (auto i = begin + t; i < end; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace deepsketch
