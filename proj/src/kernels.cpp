#include "fw/kernels.hpp"

namespace fw::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

ScopedThreadLimit::ScopedThreadLimit(int n) : previous_(max_threads()) {
#ifdef _OPENMP
  omp_set_num_threads(n);
#else
  (void)n;
#endif
}

ScopedThreadLimit::~ScopedThreadLimit() {
#ifdef _OPENMP
  omp_set_num_threads(previous_);
#endif
}

}  // namespace fw::kernels
