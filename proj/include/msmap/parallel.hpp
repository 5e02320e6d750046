#pragma once

#include <cstddef>
#include <functional>

namespace msmap {

/// Process-wide worker cap for parallel_for; 0 means hardware concurrency.
void set_max_threads(unsigned n);
unsigned max_threads();

/// Runs fn(i) for i in [0, n) on up to max_threads() workers. Each index is
/// visited exactly once; the first exception thrown is rethrown after all
/// workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace msmap
