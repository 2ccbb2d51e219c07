#include "tasksumma/oracle.hpp"

#include <cmath>
#include <stdexcept>

namespace tasksumma {

namespace {

void check_conformable(const BlockMatrix& a, const BlockMatrix& b) {
  if (!a.conformable(b)) {
    throw std::invalid_argument("oracle_multiply: inner tilings do not match");
  }
}

}  // namespace

DenseBlock oracle_multiply(const BlockMatrix& a, const BlockMatrix& b) {
  check_conformable(a, b);
  const DenseBlock da = a.to_dense();
  const DenseBlock db = b.to_dense();
  DenseBlock c(da.rows, db.cols);
  for (std::int64_t i = 0; i < da.rows; ++i) {
    for (std::int64_t l = 0; l < da.cols; ++l) {
      const double av = da.at(i, l);
      for (std::int64_t j = 0; j < db.cols; ++j) {
        c.at(i, j) += av * db.at(l, j);
      }
    }
  }
  return c;
}

DenseBlock oracle_multiply_blocked(const BlockMatrix& a, const BlockMatrix& b) {
  check_conformable(a, b);
  DenseBlock c(a.rows(), b.cols());
  // Ascending inner-block order with the products folded straight into the
  // result: element-wise this is the same ascending accumulation as the
  // flat variant, just visited block by block.
  for (std::int64_t k = 0; k < a.block_cols(); ++k) {
    for (std::int64_t i = 0; i < a.block_rows(); ++i) {
      const std::int64_t row0 = a.row_tiling().block_offset(i);
      const DenseBlock& ablk = a.block(i, k);
      for (std::int64_t j = 0; j < b.block_cols(); ++j) {
        const std::int64_t col0 = b.col_tiling().block_offset(j);
        const DenseBlock& bblk = b.block(k, j);
        for (std::int64_t r = 0; r < ablk.rows; ++r) {
          for (std::int64_t l = 0; l < ablk.cols; ++l) {
            const double av = ablk.at(r, l);
            for (std::int64_t q = 0; q < bblk.cols; ++q) {
              c.at(row0 + r, col0 + q) += av * bblk.at(l, q);
            }
          }
        }
      }
    }
  }
  return c;
}

double iteration_memory_overhead(double block_rows, double block_cols,
                                 double avg_m, double avg_n, double avg_k,
                                 const ProcessGrid& grid) {
  if (block_rows < 1 || block_cols < 1 || avg_m <= 0 || avg_n <= 0 || avg_k <= 0) {
    throw std::invalid_argument("iteration_memory_overhead: non-positive input");
  }
  const double p_row = static_cast<double>(grid.rows);
  const double p_col = static_cast<double>(grid.cols);
  return block_rows * avg_m * avg_k / p_row +
         block_cols * avg_k * avg_n / p_col +
         block_rows * block_cols * avg_m * avg_n / (p_row * p_col);
}

ErrorReport max_mixed_relative_error(const DenseBlock& got,
                                     const DenseBlock& want) {
  if (got.rows != want.rows || got.cols != want.cols) {
    throw std::invalid_argument("max_mixed_relative_error: shape mismatch");
  }
  ErrorReport report;
  for (std::int64_t r = 0; r < got.rows; ++r) {
    for (std::int64_t c = 0; c < got.cols; ++c) {
      const double g = got.at(r, c);
      const double w = want.at(r, c);
      const double err = std::abs(g - w) / std::max(1.0, std::abs(w));
      if (err > report.worst || (r == 0 && c == 0)) {
        report = {err, r, c, g, w};
      }
    }
  }
  return report;
}

}  // namespace tasksumma
