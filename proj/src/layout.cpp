// SPDX-License-Identifier: Apache-2.0
#include "gridmath/layout.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace gridmath {

namespace {

// Near-equal 1D split: earlier chunks take the remainder.
std::vector<std::pair<std::uint64_t, std::uint64_t>> splitRange(std::uint64_t n,
                                                                std::uint64_t parts) {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> out;
  if (parts == 0) return out;
  const std::uint64_t base = n / parts;
  const std::uint64_t rem = n % parts;
  std::uint64_t start = 0;
  for (std::uint64_t p = 0; p < parts; ++p) {
    const std::uint64_t len = base + (p < rem ? 1 : 0);
    if (len == 0) continue;  // more parts than rows: trailing workers get nothing
    out.emplace_back(start, len);
    start += len;
  }
  return out;
}

}  // namespace

std::vector<WorkerId> makeWorkerGroup(std::uint32_t count) {
  std::vector<WorkerId> g(count);
  for (std::uint32_t i = 0; i < count; ++i) g[i].rank = i;
  return g;
}

Layout makeRowBlockLayout(std::uint64_t rows, std::uint64_t cols,
                          const std::vector<WorkerId>& workers) {
  if (workers.empty()) throw Error("makeRowBlockLayout: empty worker list");
  if (rows == 0 || cols == 0) throw Error("makeRowBlockLayout: zero-sized matrix");
  Layout l;
  const auto panels = splitRange(rows, workers.size());
  for (std::size_t p = 0; p < panels.size(); ++p)
    l.tiles.push_back({TileExtent{panels[p].first, panels[p].second, 0, cols},
                       workers[p % workers.size()]});
  return l;
}

Layout makeColBlockLayout(std::uint64_t rows, std::uint64_t cols,
                          const std::vector<WorkerId>& workers) {
  if (workers.empty()) throw Error("makeColBlockLayout: empty worker list");
  if (rows == 0 || cols == 0) throw Error("makeColBlockLayout: zero-sized matrix");
  Layout l;
  const auto panels = splitRange(cols, workers.size());
  for (std::size_t p = 0; p < panels.size(); ++p)
    l.tiles.push_back({TileExtent{0, rows, panels[p].first, panels[p].second},
                       workers[p % workers.size()]});
  return l;
}

Layout makeGridLayout(std::uint64_t rows, std::uint64_t cols, std::uint32_t pr, std::uint32_t pc,
                      const std::vector<WorkerId>& workers) {
  if (static_cast<std::uint64_t>(pr) * pc != workers.size())
    throw Error("makeGridLayout: pr*pc must equal worker count");
  if (rows == 0 || cols == 0) throw Error("makeGridLayout: zero-sized matrix");
  Layout l;
  const auto rowPanels = splitRange(rows, pr);
  const auto colPanels = splitRange(cols, pc);
  for (std::uint32_t r = 0; r < rowPanels.size(); ++r)
    for (std::uint32_t c = 0; c < colPanels.size(); ++c)
      l.tiles.push_back({TileExtent{rowPanels[r].first, rowPanels[r].second, colPanels[c].first,
                                    colPanels[c].second},
                         workers[r * pc + c]});
  return l;
}

Layout makeSingleTileLayout(std::uint64_t rows, std::uint64_t cols, WorkerId owner) {
  Layout l;
  l.tiles.push_back({TileExtent{0, rows, 0, cols}, owner});
  return l;
}

LayoutReport validateLayout(std::uint64_t rows, std::uint64_t cols, const Layout& layout,
                            std::uint32_t workerCount) {
  std::uint64_t covered = 0;
  for (std::size_t i = 0; i < layout.tiles.size(); ++i) {
    const auto& [e, w] = layout.tiles[i];
    if (e.rowCount == 0 || e.colCount == 0)
      return {LayoutViolation::OutOfRange, "tile " + std::to_string(i) + " is empty"};
    if (e.rowEnd() > rows || e.colEnd() > cols)
      return {LayoutViolation::OutOfRange, "tile " + std::to_string(i) + " exceeds matrix bounds"};
    if (workerCount != 0 && w.rank >= workerCount)
      return {LayoutViolation::UnknownWorker,
              "tile " + std::to_string(i) + " owned by rank " + std::to_string(w.rank)};
    for (std::size_t j = 0; j < i; ++j)
      if (e.overlaps(layout.tiles[j].first)) {
        std::ostringstream os;
        os << "tiles " << j << " and " << i << " overlap";
        return {LayoutViolation::Overlap, os.str()};
      }
    covered += e.elements();
  }
  if (covered != rows * cols)
    return {LayoutViolation::Gap, "tiles cover " + std::to_string(covered) + " of " +
                                      std::to_string(rows * cols) + " elements"};
  return {};
}

WorkerId tileOwner(const Layout& layout, std::uint64_t i, std::uint64_t j) {
  for (const auto& [e, w] : layout.tiles)
    if (e.contains(i, j)) return w;
  throw Error("tileOwner: index (" + std::to_string(i) + "," + std::to_string(j) +
              ") not covered by layout");
}

}  // namespace gridmath
