#pragma once

#include <cstddef>
#include <functional>

namespace fanhmm {

/// Process-wide worker count used by dataset-level loops (default 1).
void set_thread_count(int threads);
int thread_count();

/// Runs body(i) for i in [0, n). Work is split into contiguous blocks over
/// the configured number of threads; nested calls run serially. Callers store
/// per-index results and reduce them in index order, which keeps numeric
/// output independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace fanhmm
