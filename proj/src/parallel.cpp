#include "terraseg/parallel.hpp"

#include <cstdlib>
#include <omp.h>

namespace terraseg {

namespace {
int g_override = 0;

int read_env() {
    const char* s = std::getenv("TERRASEG_THREADS");
    if (s != nullptr) {
        int n = std::atoi(s);
        if (n >= 1) return n;
    }
    return omp_get_max_threads();
}
} // namespace

int thread_count() {
    if (g_override >= 1) return g_override;
    static int cached = read_env();
    return cached;
}

void set_thread_count(int n) { g_override = n; }

} // namespace terraseg
