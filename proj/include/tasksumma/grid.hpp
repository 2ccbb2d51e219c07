#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>

namespace tasksumma {

struct NodeCoord {
  std::int32_t row = 0;
  std::int32_t col = 0;
  bool operator==(const NodeCoord&) const = default;
};

/// Rectangular mesh of simulated processes.
struct ProcessGrid {
  std::int32_t rows = 1;
  std::int32_t cols = 1;

  ProcessGrid(std::int32_t r, std::int32_t c) : rows(r), cols(c) {
    if (r < 1 || c < 1) throw std::invalid_argument("ProcessGrid: dims must be >= 1");
  }

  std::int32_t node_count() const { return rows * cols; }
  std::int32_t index(NodeCoord n) const { return n.row * cols + n.col; }
  NodeCoord coord(std::int32_t idx) const {
    return NodeCoord{idx / cols, idx % cols};
  }

  bool operator==(const ProcessGrid&) const = default;
};

/// Block-cyclic owner of block (i, j): coordinates are folded onto the grid
/// by modulus, so consecutive block rows/cols land on consecutive grid
/// rows/cols.
inline NodeCoord owner(const ProcessGrid& grid, std::int64_t i, std::int64_t j) {
  return NodeCoord{static_cast<std::int32_t>(i % grid.rows),
                   static_cast<std::int32_t>(j % grid.cols)};
}

}  // namespace tasksumma

template <>
struct std::hash<tasksumma::NodeCoord> {
  std::size_t operator()(const tasksumma::NodeCoord& n) const noexcept {
    return (static_cast<std::size_t>(n.row) << 20) ^ static_cast<std::size_t>(n.col);
  }
};
