#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <exception>
#include <optional>
#include <string>

#include <omp.h>

#include "idc/errors.hpp"

namespace idc {

/// Serial is the reference path; Parallel distributes independent items over OpenMP threads.
/// Both must produce identical results.
enum class Execution { Serial, Parallel };

/// Wall-clock budget shared by the stages of one run.
class Deadline {
 public:
  using Clock = std::chrono::steady_clock;

  Deadline() = default;  // never expires
  explicit Deadline(std::chrono::duration<double> budget)
      : end_(Clock::now() + std::chrono::duration_cast<Clock::duration>(budget)) {}

  bool expired() const { return end_ && Clock::now() >= *end_; }

 private:
  std::optional<Clock::time_point> end_;
};

/// Runs body(i) for i in [0, n). Items must write to disjoint outputs.
/// Throws TimeoutError naming `stage` if the deadline passes mid-loop. An exception thrown by
/// body is rethrown after the loop (the lowest failing index among those that ran).
template <typename Body>
void parallel_for(std::size_t n, Execution exec, Body&& body, const Deadline* deadline = nullptr,
                  const char* stage = "compute") {
  std::atomic<bool> stop{false};
  bool timed_out = false;
  std::exception_ptr failure;
  std::size_t failure_index = n;
  if (exec == Execution::Serial) {
    for (std::size_t i = 0; i < n; ++i) {
      if (deadline && deadline->expired()) {
        timed_out = true;
        break;
      }
      try {
        body(i);
      } catch (...) {
        failure = std::current_exception();
        break;
      }
    }
  } else {
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
      if (stop.load(std::memory_order_relaxed)) continue;
      if (deadline && deadline->expired()) {
#pragma omp critical(idc_parallel_for)
        timed_out = true;
        stop = true;
        continue;
      }
      try {
        body(static_cast<std::size_t>(i));
      } catch (...) {
#pragma omp critical(idc_parallel_for)
        {
          if (static_cast<std::size_t>(i) < failure_index) {
            failure_index = static_cast<std::size_t>(i);
            failure = std::current_exception();
          }
        }
        stop = true;
      }
    }
  }
  if (failure) std::rethrow_exception(failure);
  if (timed_out) throw TimeoutError(std::string(stage) + ": time budget exceeded");
}

/// Number of disjoint partitions used by partition-and-merge reductions.
inline std::size_t partition_count(Execution exec) {
  return exec == Execution::Serial ? 1 : static_cast<std::size_t>(omp_get_max_threads());
}

}  // namespace idc
