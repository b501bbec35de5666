// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "gridmath/descriptor.hpp"

namespace gridmath {

// Half-open rectangle in matrix coordinates.
struct Rect {
  std::uint64_t r0 = 0, r1 = 0, c0 = 0, c1 = 0;

  std::uint64_t rows() const { return r1 - r0; }
  std::uint64_t cols() const { return c1 - c0; }
  std::uint64_t elements() const { return rows() * cols(); }
  bool empty() const { return r0 >= r1 || c0 >= c1; }

  static Rect ofExtent(const TileExtent& e) { return {e.rowStart, e.rowEnd(), e.colStart, e.colEnd()}; }
  static Rect full(const MatrixDescriptor& d) { return {0, d.rows, 0, d.cols}; }

  friend bool operator==(const Rect&, const Rect&) = default;
};

std::optional<Rect> intersectRect(const Rect& a, const Rect& b);

// One movement of a sub-rectangle: the piece numbering is produced by the
// same pure planning functions on every actor, so sender and receiver agree
// without negotiation.
struct PieceRoute {
  std::uint32_t pieceId = 0;
  std::uint32_t src = 0;
  std::uint32_t consumer = 0;
  std::uint64_t matrixId = 0;
  Rect rect;
};

// A consumer-side requirement: a rectangle of one matrix, either carried by
// pieces or read straight out of a fresh local replica.
struct RegionNeed {
  std::uint64_t matrixId = 0;
  std::uint32_t consumer = 0;
  Rect rect;
  bool viaReplica = false;
  std::vector<PieceRoute> pieces;  // empty when viaReplica
};

// Builds needs with op-wide unique piece ids.
class NeedPlanner {
 public:
  // allowReplica: read from the consumer's replica when the descriptor says a
  // replica at the current version exists on every worker.
  RegionNeed& addNeed(const MatrixDescriptor& d, const Rect& rect, std::uint32_t consumer,
                      bool allowReplica);

  const std::vector<RegionNeed>& needs() const { return needs_; }
  std::vector<RegionNeed>& needs() { return needs_; }
  std::uint32_t pieceCount() const { return nextPieceId_; }

 private:
  std::uint32_t nextPieceId_ = 0;
  std::vector<RegionNeed> needs_;
};

// Dense row-major staging buffer for an assembled rectangle in compute
// precision T (float or double).
template <typename T>
struct Slab {
  Rect rect;
  std::vector<T> data;

  T at(std::uint64_t i, std::uint64_t j) const {  // global coordinates
    return data[(i - rect.r0) * rect.cols() + (j - rect.c0)];
  }
  T* row(std::uint64_t i) { return data.data() + (i - rect.r0) * rect.cols(); }
  const T* row(std::uint64_t i) const { return data.data() + (i - rect.r0) * rect.cols(); }
};

// Contiguous byte runs of a tile inside the full row-major matrix image;
// replication streams these.
struct ByteRun {
  std::uint64_t offset = 0;  // byte offset into the full matrix image
  std::uint64_t length = 0;
};

std::vector<ByteRun> tileByteRuns(const MatrixDescriptor& d, const TileExtent& e);

// Copies the sub-rectangle `rect` of a tile buffer (row-major over `extent`)
// into a packed row-major byte buffer.
void packRect(const std::uint8_t* tileData, const TileExtent& extent, const Rect& rect,
              std::size_t elemBytes, std::uint8_t* out);

// Scatters packed row-major bytes for `rect` into a tile buffer.
void unpackRect(std::uint8_t* tileData, const TileExtent& extent, const Rect& rect,
                std::size_t elemBytes, const std::uint8_t* in);

}  // namespace gridmath
