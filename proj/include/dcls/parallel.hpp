#pragma once

#include <cstddef>
#include <functional>

namespace dcls {

/// Current worker count. Defaults to 1; DCLS_WORKERS in the environment
/// overrides the default, set_num_workers() overrides both.
int num_workers();
void set_num_workers(int n);

/// Runs fn over contiguous chunks [begin, end) of [0, n) on up to
/// num_workers() threads. Work items must write disjoint outputs; under that
/// contract results are identical for every worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace dcls
