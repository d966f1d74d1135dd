#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace smac {

// Global thread-count control for the OpenMP kernels. 0 = runtime default.
void set_num_threads(int n);
int num_threads();

// True when compiled with OpenMP.
bool openmp_enabled();

} // namespace smac
