#pragma once

#include <cstdint>
#include <functional>

namespace forec {

/// Worker count for the deterministic parallel mode. Initialized from the
/// FOREC_THREADS environment variable (default 1 = serial).
int thread_count();

/// Overrides the worker count (used by tests).
void set_thread_count(int n);

/// Runs fn(i) for i in [0, n). With more than one worker the index range is
/// split into contiguous static chunks, one worker per chunk, so every
/// element is computed by exactly one worker and results are independent of
/// the worker count.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace forec
