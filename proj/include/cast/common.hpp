#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace cast {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Warnings. Library code reports non-fatal diagnostics here; the default
// handler prints to stderr, tests swap in a collector.

using WarningHandler = std::function<void(std::string_view)>;

namespace detail {
inline std::mutex& warning_mutex() {
  static std::mutex m;
  return m;
}
inline WarningHandler& warning_slot() {
  static WarningHandler handler = [](std::string_view msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return handler;
}
}  // namespace detail

inline WarningHandler set_warning_handler(WarningHandler handler) {
  std::lock_guard lock(detail::warning_mutex());
  std::swap(detail::warning_slot(), handler);
  return handler;
}

inline void warn(std::string_view msg) {
  std::lock_guard lock(detail::warning_mutex());
  if (detail::warning_slot()) detail::warning_slot()(msg);
}

// ---------------------------------------------------------------------------
// Seeds. Every independent job (bootstrap replicate, sweep cell, RFF draw)
// gets its own seed derived from the master seed and a job index, so serial
// and parallel runs see identical random streams.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t job) {
  return splitmix64(splitmix64(master) ^ splitmix64(job + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t job, std::uint64_t sub) {
  return derive_seed(derive_seed(master, job), sub);
}

// ---------------------------------------------------------------------------
// Threading.

/// Thread budget: CAST_THREADS if set and positive, otherwise the hardware
/// concurrency.
inline unsigned default_threads() {
  if (const char* env = std::getenv("CAST_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, n). Results must be written by index; the first
/// exception thrown by any job is rethrown after all workers join.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::mutex m;
  std::size_t next = 0;
  std::exception_ptr failure;
  auto loop = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lock(m);
        if (next >= n || failure) return;
        i = next++;
      }
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(m);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned t = 0; t < workers; ++t) pool.emplace_back(loop);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace cast
