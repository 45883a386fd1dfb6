#pragma once

#include <cstddef>
#include <functional>

namespace spatiodec {

// Worker count used by kernel-internal loops. Results never depend on it:
// parallel loops only write disjoint outputs and any cross-item reduction
// happens afterwards in item order.
void set_num_threads(int n);
int num_threads();

// Reads SPATIODEC_THREADS when `requested` is not positive.
void configure_threads(int requested);

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace spatiodec
