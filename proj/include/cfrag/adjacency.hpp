#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace cfrag {

/// Compressed neighbor lists used by message passing. Row r's incidences occupy
/// [offsets[r], offsets[r+1]); each incidence names the neighbor row and the undirected
/// edge id it travels over, so one edge id appears exactly twice.
struct SparseAdjacency {
  std::size_t rows = 0;
  std::size_t edge_count = 0;
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> neighbor;
  std::vector<std::uint32_t> edge;

  std::size_t degree(std::size_t row) const { return offsets[row + 1] - offsets[row]; }
  std::span<const std::uint32_t> neighbors_of(std::size_t row) const {
    return {neighbor.data() + offsets[row], degree(row)};
  }
  std::span<const std::uint32_t> edges_of(std::size_t row) const {
    return {edge.data() + offsets[row], degree(row)};
  }
};

}  // namespace cfrag
