#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "tasksumma/dense_block.hpp"
#include "tasksumma/grid.hpp"
#include "tasksumma/tiling.hpp"

namespace tasksumma {

/// Dense tiled matrix distributed block-cyclically over a process grid.
/// Every block is present; block (i, j) is owned by owner(grid, i, j).
class BlockMatrix {
 public:
  BlockMatrix(Tiling row_tiling, Tiling col_tiling, ProcessGrid grid);

  std::int64_t rows() const { return row_tiling_.extent(); }
  std::int64_t cols() const { return col_tiling_.extent(); }
  std::int64_t block_rows() const { return row_tiling_.block_count(); }
  std::int64_t block_cols() const { return col_tiling_.block_count(); }

  const Tiling& row_tiling() const { return row_tiling_; }
  const Tiling& col_tiling() const { return col_tiling_; }
  const ProcessGrid& grid() const { return grid_; }

  DenseBlock& block(std::int64_t i, std::int64_t j);
  const DenseBlock& block(std::int64_t i, std::int64_t j) const;

  /// True when this matrix can left-multiply `rhs` (inner tilings match).
  bool conformable(const BlockMatrix& rhs) const {
    return col_tiling_ == rhs.row_tiling();
  }

  /// Flatten to one dense row-major matrix.
  DenseBlock to_dense() const;

 private:
  Tiling row_tiling_;
  Tiling col_tiling_;
  ProcessGrid grid_;
  std::vector<DenseBlock> blocks_;  // block_rows * block_cols, row-major
};

/// Fill every block from the per-block random stream derived from
/// (seed, i, j); entries are uniform in [-1, 1). Fully determined by the
/// seed and the tilings, independent of the grid shape.
BlockMatrix random_block_matrix(const Tiling& row_tiling,
                                const Tiling& col_tiling,
                                const ProcessGrid& grid, std::uint64_t seed);

/// Write the flattened matrix in the binary dense format (see dense_block.hpp).
void write_dense_matrix(std::ostream& out, const BlockMatrix& m);

}  // namespace tasksumma
