#pragma once

#include <cstddef>

namespace copdet::detail {

// out[m * n1 + n] = exp(a[m] + b[n] + e * log(1 + x0[m] + x1[n])).
// Inputs must be finite; compiled with relaxed floating-point semantics.
void clayton_cell_kernel(const double* a, const double* x0, std::size_t n0, const double* b, const double* x1,
                         std::size_t n1, double e, double* out);

// dot(row, weights) for every row of a row-major n0 x n1 table.
void row_dot(const double* table, std::size_t n0, std::size_t n1, const double* weights, double* out);

}  // namespace copdet::detail
