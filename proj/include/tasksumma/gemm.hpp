#pragma once

#include <cstdint>

#include "tasksumma/dense_block.hpp"

namespace tasksumma {

/// C += alpha * A * B on raw row-major buffers with leading dimensions.
///
/// The loop order is fixed (i, then inner, then j), so every C element
/// accumulates its inner-dimension products in strictly ascending order.
/// That pins the floating-point result bit-for-bit: two calls that feed the
/// same element the same products in the same order agree exactly, which is
/// what the deterministic execution mode is built on.
void gemm_accumulate(double alpha, const double* a, std::int64_t lda,
                     std::int64_t m, std::int64_t inner, const double* b,
                     std::int64_t ldb, std::int64_t n, double* c,
                     std::int64_t ldc);

/// Block-level wrapper: c = alpha * a * b + c in place, returning c.
/// Throws std::invalid_argument on shape mismatch.
DenseBlock& gemm_block(double alpha, const DenseBlock& a, const DenseBlock& b,
                       DenseBlock& c);

}  // namespace tasksumma
