#include "tasksumma/gemm.hpp"

#include <stdexcept>

namespace tasksumma {

void gemm_accumulate(double alpha, const double* a, std::int64_t lda,
                     std::int64_t m, std::int64_t inner, const double* b,
                     std::int64_t ldb, std::int64_t n, double* c,
                     std::int64_t ldc) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    double* crow = c + i * ldc;
    for (std::int64_t l = 0; l < inner; ++l) {
      const double s = alpha * arow[l];
      const double* brow = b + l * ldb;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
}

DenseBlock& gemm_block(double alpha, const DenseBlock& a, const DenseBlock& b,
                       DenseBlock& c) {
  if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols) {
    throw std::invalid_argument("gemm_block: shape mismatch");
  }
  gemm_accumulate(alpha, a.data.data(), a.cols, a.rows, a.cols, b.data.data(),
                  b.cols, b.cols, c.data.data(), c.cols);
  return c;
}

}  // namespace tasksumma
