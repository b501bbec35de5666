// SPDX-License-Identifier: Apache-2.0
#include "gridmath/descriptor.hpp"

namespace gridmath {

void encodeDescriptor(const MatrixDescriptor& d, WireWriter& w) {
  w.u64(d.matrixId);
  w.u64(d.rows);
  w.u64(d.cols);
  w.u8(static_cast<std::uint8_t>(d.precision));
  w.u64(d.version);
  w.u32(static_cast<std::uint32_t>(d.layout.tiles.size()));
  for (const auto& [e, owner] : d.layout.tiles) {
    w.u64(e.rowStart);
    w.u64(e.rowCount);
    w.u64(e.colStart);
    w.u64(e.colCount);
    w.u32(owner.rank);
  }
}

MatrixDescriptor decodeDescriptor(WireReader& r) {
  MatrixDescriptor d;
  d.matrixId = r.u64();
  d.rows = r.u64();
  d.cols = r.u64();
  d.precision = precisionFromTag(r.u8());
  d.version = r.u64();
  const std::uint32_t n = r.u32();
  d.layout.tiles.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    TileExtent e;
    e.rowStart = r.u64();
    e.rowCount = r.u64();
    e.colStart = r.u64();
    e.colCount = r.u64();
    WorkerId w{r.u32()};
    d.layout.tiles.push_back({e, w});
  }
  return d;
}

std::uint64_t descriptorHash(const MatrixDescriptor& d) {
  WireWriter w;
  encodeDescriptor(d, w);
  return fnv1a(w.view().data(), w.view().size());
}

std::uint64_t tableHash(const DescriptorTable& t) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [id, d] : t) {  // std::map iterates in key order
    const std::uint64_t dh = descriptorHash(d);
    h = fnv1a(&dh, sizeof dh, h);
  }
  return h;
}

}  // namespace gridmath
