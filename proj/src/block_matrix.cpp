#include "tasksumma/block_matrix.hpp"

#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <utility>

#include "tasksumma/rng.hpp"

namespace tasksumma {

namespace {

void write_u64_le(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(v >> (8 * b));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw std::runtime_error("read_dense: truncated header");
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | bytes[b];
  return v;
}

}  // namespace

void write_dense(std::ostream& out, const DenseBlock& block) {
  write_u64_le(out, static_cast<std::uint64_t>(block.rows));
  write_u64_le(out, static_cast<std::uint64_t>(block.cols));
  for (double v : block.data) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64_le(out, bits);
  }
}

DenseBlock read_dense(std::istream& in) {
  const auto rows = static_cast<std::int64_t>(read_u64_le(in));
  const auto cols = static_cast<std::int64_t>(read_u64_le(in));
  DenseBlock block(rows, cols);
  for (double& v : block.data) {
    const std::uint64_t bits = read_u64_le(in);
    std::memcpy(&v, &bits, 8);
  }
  if (!in) throw std::runtime_error("read_dense: truncated payload");
  return block;
}

BlockMatrix::BlockMatrix(Tiling row_tiling, Tiling col_tiling, ProcessGrid grid)
    : row_tiling_(std::move(row_tiling)),
      col_tiling_(std::move(col_tiling)),
      grid_(grid) {
  blocks_.reserve(static_cast<std::size_t>(block_rows() * block_cols()));
  for (std::int64_t i = 0; i < block_rows(); ++i) {
    for (std::int64_t j = 0; j < block_cols(); ++j) {
      blocks_.emplace_back(row_tiling_.block_extent(i), col_tiling_.block_extent(j));
    }
  }
}

DenseBlock& BlockMatrix::block(std::int64_t i, std::int64_t j) {
  if (i < 0 || i >= block_rows() || j < 0 || j >= block_cols()) {
    throw std::invalid_argument("BlockMatrix::block: index out of range");
  }
  return blocks_[static_cast<std::size_t>(i * block_cols() + j)];
}

const DenseBlock& BlockMatrix::block(std::int64_t i, std::int64_t j) const {
  return const_cast<BlockMatrix*>(this)->block(i, j);
}

DenseBlock BlockMatrix::to_dense() const {
  DenseBlock dense(rows(), cols());
  for (std::int64_t i = 0; i < block_rows(); ++i) {
    const std::int64_t row0 = row_tiling_.block_offset(i);
    for (std::int64_t j = 0; j < block_cols(); ++j) {
      const std::int64_t col0 = col_tiling_.block_offset(j);
      const DenseBlock& blk = block(i, j);
      for (std::int64_t r = 0; r < blk.rows; ++r) {
        std::memcpy(dense.row_ptr(row0 + r) + col0, blk.row_ptr(r),
                    static_cast<std::size_t>(blk.cols) * sizeof(double));
      }
    }
  }
  return dense;
}

BlockMatrix random_block_matrix(const Tiling& row_tiling,
                                const Tiling& col_tiling,
                                const ProcessGrid& grid, std::uint64_t seed) {
  BlockMatrix m(row_tiling, col_tiling, grid);
  for (std::int64_t i = 0; i < m.block_rows(); ++i) {
    for (std::int64_t j = 0; j < m.block_cols(); ++j) {
      SplitMix64 stream(block_stream_seed(seed, i, j));
      for (double& v : m.block(i, j).data) v = stream.symmetric_unit();
    }
  }
  return m;
}

void write_dense_matrix(std::ostream& out, const BlockMatrix& m) {
  write_dense(out, m.to_dense());
}

}  // namespace tasksumma
