#include "tasksumma/tiling.hpp"

#include <stdexcept>
#include <utility>

#include "tasksumma/rng.hpp"

#include <json.hpp>

namespace tasksumma {

Tiling::Tiling(std::vector<std::int64_t> boundaries)
    : boundaries_(std::move(boundaries)) {
  if (boundaries_.size() < 2) {
    throw std::invalid_argument("Tiling: need at least [0, extent]");
  }
  if (boundaries_.front() != 0) {
    throw std::invalid_argument("Tiling: boundaries must start at 0");
  }
  for (std::size_t b = 1; b < boundaries_.size(); ++b) {
    if (boundaries_[b] <= boundaries_[b - 1]) {
      throw std::invalid_argument("Tiling: boundaries must be strictly increasing");
    }
  }
}

std::int64_t Tiling::block_extent(std::int64_t b) const {
  if (b < 0 || b >= block_count()) {
    throw std::invalid_argument("Tiling: block index out of range");
  }
  return boundaries_[static_cast<std::size_t>(b) + 1] -
         boundaries_[static_cast<std::size_t>(b)];
}

std::int64_t Tiling::block_offset(std::int64_t b) const {
  if (b < 0 || b >= block_count()) {
    throw std::invalid_argument("Tiling: block index out of range");
  }
  return boundaries_[static_cast<std::size_t>(b)];
}

Tiling make_uniform_tiling(std::int64_t extent, std::int64_t block_size) {
  if (extent < 1 || block_size < 1) {
    throw std::invalid_argument("make_uniform_tiling: extent and block_size must be >= 1");
  }
  std::vector<std::int64_t> boundaries;
  for (std::int64_t b = 0; b < extent; b += block_size) boundaries.push_back(b);
  boundaries.push_back(extent);
  return Tiling(std::move(boundaries));
}

Tiling make_nonuniform_tiling(std::int64_t extent, std::int64_t block_count,
                              std::uint64_t seed) {
  if (extent < 1 || block_count < 1 || block_count > extent) {
    throw std::invalid_argument(
        "make_nonuniform_tiling: need 1 <= block_count <= extent");
  }
  // Start every block at one element so none can end up empty, then grow
  // uniformly random blocks one element at a time until the extent is used.
  std::vector<std::int64_t> extents(static_cast<std::size_t>(block_count), 1);
  SplitMix64 rng(seed);
  for (std::int64_t handed = block_count; handed < extent; ++handed) {
    extents[rng.below(static_cast<std::uint64_t>(block_count))] += 1;
  }
  std::vector<std::int64_t> boundaries(static_cast<std::size_t>(block_count) + 1, 0);
  for (std::int64_t b = 0; b < block_count; ++b) {
    boundaries[static_cast<std::size_t>(b) + 1] =
        boundaries[static_cast<std::size_t>(b)] + extents[static_cast<std::size_t>(b)];
  }
  return Tiling(std::move(boundaries));
}

std::string to_json(const Tiling& tiling) {
  return nlohmann::json(tiling.boundaries()).dump();
}

Tiling tiling_from_json(const std::string& text) {
  nlohmann::json parsed = nlohmann::json::parse(text);
  if (!parsed.is_array()) {
    throw std::invalid_argument("tiling_from_json: expected a JSON array");
  }
  return Tiling(parsed.get<std::vector<std::int64_t>>());
}

}  // namespace tasksumma
