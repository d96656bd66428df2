#pragma once

#include <cstddef>
#include <functional>

namespace phasedeploy {

// Runs body(i) for i in [0, n) on up to `threads` workers. Callers write
// results into slot i of a preallocated container, so output order never
// depends on scheduling. If bodies throw, the exception from the lowest index
// is rethrown after all workers join.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

}  // namespace phasedeploy
