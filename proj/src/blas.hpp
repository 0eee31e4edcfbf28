#pragma once

#include <cstddef>

namespace samfed {

// Row-major single-precision C = op(A) op(B) + beta C with C [m, n] and the
// inner dimension k. Runs single-threaded so results never depend on the
// BLAS thread pool.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float* a, const float* b,
          float beta, float* c);

}  // namespace samfed
