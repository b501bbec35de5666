// SPDX-License-Identifier: Apache-2.0
#include "gridmath/pieces.hpp"

#include <cstring>

namespace gridmath {

std::optional<Rect> intersectRect(const Rect& a, const Rect& b) {
  Rect r{std::max(a.r0, b.r0), std::min(a.r1, b.r1), std::max(a.c0, b.c0), std::min(a.c1, b.c1)};
  if (r.empty()) return std::nullopt;
  return r;
}

RegionNeed& NeedPlanner::addNeed(const MatrixDescriptor& d, const Rect& rect,
                                 std::uint32_t consumer, bool allowReplica) {
  RegionNeed need;
  need.matrixId = d.matrixId;
  need.consumer = consumer;
  need.rect = rect;
  need.viaReplica = allowReplica && d.replicaFresh();
  if (!need.viaReplica) {
    for (const auto& [extent, owner] : d.layout.tiles) {
      const auto piece = intersectRect(rect, Rect::ofExtent(extent));
      if (!piece) continue;
      need.pieces.push_back(PieceRoute{nextPieceId_++, owner.rank, consumer, d.matrixId, *piece});
    }
  }
  needs_.push_back(std::move(need));
  return needs_.back();
}

std::vector<ByteRun> tileByteRuns(const MatrixDescriptor& d, const TileExtent& e) {
  const std::size_t eb = bytesOf(d.precision);
  std::vector<ByteRun> runs;
  if (e.colStart == 0 && e.colCount == d.cols) {
    runs.push_back({e.rowStart * d.cols * eb, e.rowCount * d.cols * eb});
    return runs;
  }
  runs.reserve(e.rowCount);
  for (std::uint64_t r = e.rowStart; r < e.rowEnd(); ++r)
    runs.push_back({(r * d.cols + e.colStart) * eb, e.colCount * eb});
  return runs;
}

void packRect(const std::uint8_t* tileData, const TileExtent& extent, const Rect& rect,
              std::size_t elemBytes, std::uint8_t* out) {
  const std::size_t rowBytes = rect.cols() * elemBytes;
  for (std::uint64_t r = rect.r0; r < rect.r1; ++r) {
    const std::size_t srcOff =
        ((r - extent.rowStart) * extent.colCount + (rect.c0 - extent.colStart)) * elemBytes;
    std::memcpy(out + (r - rect.r0) * rowBytes, tileData + srcOff, rowBytes);
  }
}

void unpackRect(std::uint8_t* tileData, const TileExtent& extent, const Rect& rect,
                std::size_t elemBytes, const std::uint8_t* in) {
  const std::size_t rowBytes = rect.cols() * elemBytes;
  for (std::uint64_t r = rect.r0; r < rect.r1; ++r) {
    const std::size_t dstOff =
        ((r - extent.rowStart) * extent.colCount + (rect.c0 - extent.colStart)) * elemBytes;
    std::memcpy(tileData + dstOff, in + (r - rect.r0) * rowBytes, rowBytes);
  }
}

}  // namespace gridmath
