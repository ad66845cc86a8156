#pragma once

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <Eigen/Core>

namespace hipa {

inline int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_num_threads(int n) {
    if (n < 1) n = 1;
#ifdef _OPENMP
    omp_set_num_threads(n);
#endif
    Eigen::setNbThreads(n);
}

/// Applies the HIPA_THREADS cap, if set. Returns the effective thread count.
inline int configure_threads_from_env() {
    if (const char* env = std::getenv("HIPA_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) set_num_threads(n);
        } catch (const std::exception&) {
        }
    }
    return max_threads();
}

} // namespace hipa
