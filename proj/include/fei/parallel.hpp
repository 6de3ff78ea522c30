#pragma once

#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace fei {

/// Thread cap from FEI_THREADS, else 1.
inline unsigned thread_limit_from_env() {
  if (const char* v = std::getenv("FEI_THREADS")) {
    try {
      const long n = std::stol(v);
      if (n > 0) return static_cast<unsigned>(n);
    } catch (...) {
    }
  }
  return 1;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// visited exactly once; the first exception is rethrown after joining.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      if (failed) return;
      try {
        fn(i);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(threads, n);
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace fei
