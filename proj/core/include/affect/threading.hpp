#pragma once

#include <cstdint>
#include <functional>

namespace affect {

// Process-wide worker count for parallel_for. 1 disables threading.
void set_num_threads(int n);
int num_threads();

// Runs fn(begin, end) over contiguous chunks of [0, n). Callers must only
// write to disjoint locations per index; chunk boundaries depend on the
// thread count, so reductions belong outside this primitive.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace affect
