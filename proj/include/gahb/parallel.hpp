#pragma once

#include <cstddef>
#include <functional>

namespace gahb {

/// Worker count: GAHB_THREADS if set and positive, else hardware concurrency.
std::size_t thread_count();

/// Runs body(i) for i in [0, n) on up to thread_count() threads using static
/// contiguous chunks. Bodies must write to disjoint outputs; callers reduce
/// afterwards in index order so results do not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace gahb
