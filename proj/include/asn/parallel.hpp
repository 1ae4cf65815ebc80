#pragma once

#include <cstddef>
#include <functional>

namespace asn {

// Worker count used by parallel_for. Results never depend on it: work items
// write disjoint outputs and reductions happen serially afterwards.
void set_num_threads(int n);
int num_threads();

// Runs fn(i) for i in [0, count), split into contiguous chunks.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace asn
