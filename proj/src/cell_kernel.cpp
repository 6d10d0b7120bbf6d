#include "cell_kernel.hpp"

#include <cmath>

namespace copdet::detail {

__attribute__((target_clones("avx2,fma", "default")))
void clayton_cell_kernel(const double* a, const double* x0, std::size_t n0, const double* b, const double* x1,
                         std::size_t n1, double e, double* out) {
    for (std::size_t m = 0; m < n0; ++m) {
        const double am = a[m];
        const double xm = 1.0 + x0[m];
        double* row = out + m * n1;
#pragma omp simd
        for (std::size_t n = 0; n < n1; ++n) row[n] = std::exp(am + b[n] + e * std::log(xm + x1[n]));
    }
}

__attribute__((target_clones("avx2,fma", "default")))
void row_dot(const double* table, std::size_t n0, std::size_t n1, const double* weights, double* out) {
    for (std::size_t m = 0; m < n0; ++m) {
        const double* row = table + m * n1;
        double s = 0.0;
#pragma omp simd reduction(+ : s)
        for (std::size_t n = 0; n < n1; ++n) s += row[n] * weights[n];
        out[m] = s;
    }
}

}  // namespace copdet::detail
