#pragma once

// Row-partitioned data parallelism. Rows are split into contiguous blocks in
// a fixed order; callers that need reductions write per-row partials and sum
// them in row order afterwards, so results do not depend on the worker count.

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace rgdepth {

/// Calls `fn(row)` for every row in [0, rows) using up to `workers` threads.
/// The first exception thrown by any worker is rethrown on the caller.
template <typename Fn>
void parallel_rows(int rows, int workers, Fn&& fn) {
  workers = std::clamp(workers, 1, std::max(rows, 1));
  if (workers == 1) {
    for (int r = 0; r < rows; ++r) fn(r);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(workers));
  const int block = (rows + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int begin = w * block;
    const int end = std::min(rows, begin + block);
    pool.emplace_back([&, w, begin, end] {
      try {
        for (int r = begin; r < end; ++r) fn(r);
      } catch (...) {
        errors[std::size_t(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace rgdepth
