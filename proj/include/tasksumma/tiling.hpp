#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tasksumma {

/// Partition of one matrix dimension into contiguous blocks.
///
/// Stored as the boundary list [0, b1, ..., N]: block b covers the
/// half-open element range [boundaries[b], boundaries[b+1]). Boundaries are
/// strictly increasing, so every block has extent >= 1.
class Tiling {
 public:
  /// Validates the boundary list; throws std::invalid_argument if it is
  /// empty, does not start at 0, or is not strictly increasing.
  explicit Tiling(std::vector<std::int64_t> boundaries);

  std::int64_t block_count() const {
    return static_cast<std::int64_t>(boundaries_.size()) - 1;
  }
  /// Total number of elements covered.
  std::int64_t extent() const { return boundaries_.back(); }
  /// Number of elements in block b.
  std::int64_t block_extent(std::int64_t b) const;
  /// First element of block b.
  std::int64_t block_offset(std::int64_t b) const;

  const std::vector<std::int64_t>& boundaries() const { return boundaries_; }

  bool operator==(const Tiling& other) const = default;

 private:
  std::vector<std::int64_t> boundaries_;
};

/// Blocks of `block_size` elements; the last block keeps the remainder.
/// A block size larger than the extent yields a single block.
/// Throws std::invalid_argument unless extent >= 1 and block_size >= 1.
Tiling make_uniform_tiling(std::int64_t extent, std::int64_t block_size);

/// Randomized tiling: every block starts at one element, then single
/// elements are handed to uniformly drawn blocks until the extent is
/// reached. Deterministic for a given seed. Requires
/// 1 <= block_count <= extent.
Tiling make_nonuniform_tiling(std::int64_t extent, std::int64_t block_count,
                              std::uint64_t seed);

/// JSON round-trip: a tiling serializes as the plain array of boundaries.
std::string to_json(const Tiling& tiling);
Tiling tiling_from_json(const std::string& text);

}  // namespace tasksumma
