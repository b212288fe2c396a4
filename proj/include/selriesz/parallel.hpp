#pragma once

#include <cstddef>
#include <functional>

namespace selriesz {

// Global worker count used by parallel_for. 0 means hardware concurrency.
void set_num_threads(int threads);
int num_threads();

// Runs body(i) for i in [0, n). Work is handed out dynamically, so body must
// write only to slots owned by i; results are then independent of scheduling.
// Nested calls from inside a worker run serially on that worker.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace selriesz
