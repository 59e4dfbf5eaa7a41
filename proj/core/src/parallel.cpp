#include "sanet/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sanet {

void set_num_threads(int threads) {
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

int num_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace sanet
