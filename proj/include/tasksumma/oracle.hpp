#pragma once

#include <cstdint>

#include "tasksumma/block_matrix.hpp"
#include "tasksumma/dense_block.hpp"
#include "tasksumma/grid.hpp"

namespace tasksumma {

/// Reference results for tests and verification.
///
/// Both multiply variants are deliberately naive triple loops written
/// independently of the runtime's kernel; they share no code with it beyond
/// primitive arithmetic, so an error in one side cannot hide in the other.
/// Both accumulate every output element over the inner dimension in
/// ascending order, which makes them bitwise-identical to each other and to
/// the runtime's deterministic mode.

/// Flatten both operands and multiply densely.
DenseBlock oracle_multiply(const BlockMatrix& a, const BlockMatrix& b);

/// Walk the inner block dimension in ascending order and accumulate each
/// block product directly into the dense result, mirroring how the
/// deterministic execution mode orders its updates.
DenseBlock oracle_multiply_blocked(const BlockMatrix& a, const BlockMatrix& b);

/// Average per-node memory footprint, in elements, added by one in-flight
/// multiplication iteration: the left-operand panel share, the
/// right-operand panel share, and the node's share of the result.
/// block_rows/block_cols count blocks; avg_m/avg_n/avg_k are mean block
/// extents (fractional values are fine).
double iteration_memory_overhead(double block_rows, double block_cols,
                                 double avg_m, double avg_n, double avg_k,
                                 const ProcessGrid& grid);

/// Worst component-wise deviation of `got` from `want`, measured as
/// |got - want| / max(1, |want|). The unit floor keeps benign cancellation
/// near zero from exploding an otherwise tiny absolute error.
struct ErrorReport {
  double worst = 0.0;
  std::int64_t row = 0;
  std::int64_t col = 0;
  double got = 0.0;
  double want = 0.0;
};
ErrorReport max_mixed_relative_error(const DenseBlock& got,
                                     const DenseBlock& want);

}  // namespace tasksumma
