// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridmath/common.hpp"
#include "gridmath/precision.hpp"

namespace gridmath {

struct WorkerId {
  std::uint32_t rank = 0;
  friend bool operator==(WorkerId a, WorkerId b) { return a.rank == b.rank; }
  friend bool operator<(WorkerId a, WorkerId b) { return a.rank < b.rank; }
};

// Half-open in both dimensions once widened: rows [rowStart, rowStart+rowCount).
struct TileExtent {
  std::uint64_t rowStart = 0;
  std::uint64_t rowCount = 0;
  std::uint64_t colStart = 0;
  std::uint64_t colCount = 0;

  std::uint64_t rowEnd() const { return rowStart + rowCount; }
  std::uint64_t colEnd() const { return colStart + colCount; }
  std::uint64_t elements() const { return rowCount * colCount; }
  bool contains(std::uint64_t i, std::uint64_t j) const {
    return i >= rowStart && i < rowEnd() && j >= colStart && j < colEnd();
  }
  bool overlaps(const TileExtent& o) const {
    return rowStart < o.rowEnd() && o.rowStart < rowEnd() && colStart < o.colEnd() &&
           o.colStart < colEnd();
  }
  friend bool operator==(const TileExtent& a, const TileExtent& b) {
    return a.rowStart == b.rowStart && a.rowCount == b.rowCount && a.colStart == b.colStart &&
           a.colCount == b.colCount;
  }
};

struct Layout {
  std::vector<std::pair<TileExtent, WorkerId>> tiles;

  friend bool operator==(const Layout& a, const Layout& b) {
    if (a.tiles.size() != b.tiles.size()) return false;
    for (std::size_t i = 0; i < a.tiles.size(); ++i)
      if (!(a.tiles[i].first == b.tiles[i].first) || !(a.tiles[i].second == b.tiles[i].second))
        return false;
    return true;
  }
};

enum class LayoutViolation { Ok, Overlap, Gap, OutOfRange, UnknownWorker };

struct LayoutReport {
  LayoutViolation kind = LayoutViolation::Ok;
  std::string detail;
  bool ok() const { return kind == LayoutViolation::Ok; }
};

// Contiguous row panels, sizes differing by at most one, earliest workers
// take the remainder.
Layout makeRowBlockLayout(std::uint64_t rows, std::uint64_t cols,
                          const std::vector<WorkerId>& workers);

// Column panels; the transpose of makeRowBlockLayout.
Layout makeColBlockLayout(std::uint64_t rows, std::uint64_t cols,
                          const std::vector<WorkerId>& workers);

// pr x pc grid of near-equal tiles, row-major worker assignment.
Layout makeGridLayout(std::uint64_t rows, std::uint64_t cols, std::uint32_t pr, std::uint32_t pc,
                      const std::vector<WorkerId>& workers);

Layout makeSingleTileLayout(std::uint64_t rows, std::uint64_t cols, WorkerId owner);

// Returns the first violated invariant. workerCount == 0 skips the
// worker-group membership check.
LayoutReport validateLayout(std::uint64_t rows, std::uint64_t cols, const Layout& layout,
                            std::uint32_t workerCount = 0);

// Unique owner of element (i, j). Throws on out-of-range indices.
WorkerId tileOwner(const Layout& layout, std::uint64_t i, std::uint64_t j);

std::vector<WorkerId> makeWorkerGroup(std::uint32_t count);

}  // namespace gridmath
