#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace tasksumma {

/// Row-major dense matrix tile.
struct DenseBlock {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<double> data;  // rows * cols values, row-major

  DenseBlock() = default;
  DenseBlock(std::int64_t r, std::int64_t c) : rows(r), cols(c) {
    if (r < 0 || c < 0) throw std::invalid_argument("DenseBlock: negative shape");
    data.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0);
  }

  double& at(std::int64_t r, std::int64_t c) {
    return data[static_cast<std::size_t>(r * cols + c)];
  }
  double at(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(r * cols + c)];
  }
  double* row_ptr(std::int64_t r) { return data.data() + r * cols; }
  const double* row_ptr(std::int64_t r) const { return data.data() + r * cols; }

  std::int64_t size_bytes() const {
    return static_cast<std::int64_t>(8) * rows * cols;
  }

  bool operator==(const DenseBlock& other) const = default;
};

/// Binary dense-matrix format: a 16-byte header of two little-endian
/// uint64 values (rows, cols) followed by rows*cols little-endian float64
/// values in row-major order.
void write_dense(std::ostream& out, const DenseBlock& block);
DenseBlock read_dense(std::istream& in);

}  // namespace tasksumma
