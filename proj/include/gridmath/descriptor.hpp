// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>

#include "gridmath/layout.hpp"
#include "gridmath/wire.hpp"

namespace gridmath {

// Global identity of a distributed matrix. Every worker holds an identical
// copy; the master's table is the source of truth and updates reach workers
// strictly before any op that depends on them.
struct MatrixDescriptor {
  std::uint64_t matrixId = 0;
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  Precision precision = Precision::Single;
  Layout layout;
  std::uint64_t version = 0;

  // Version at which a full replica was last pushed to every worker. Not part
  // of the wire encoding; it travels with the replicate op itself. Kernels
  // read operands from local replicas when this matches `version`.
  std::uint64_t replicatedVersion = ~0ull;

  std::uint64_t elementCount() const { return rows * cols; }
  std::uint64_t byteCount() const { return elementCount() * bytesOf(precision); }
  bool replicaFresh() const { return replicatedVersion == version; }
};

// Pinned wire encoding: u64 id, u64 rows, u64 cols, u8 precision tag,
// u64 version, u32 tile count, then per tile 4x u64 extent + u32 rank.
void encodeDescriptor(const MatrixDescriptor& d, WireWriter& w);
MatrixDescriptor decodeDescriptor(WireReader& r);

std::uint64_t descriptorHash(const MatrixDescriptor& d);

using DescriptorTable = std::map<std::uint64_t, MatrixDescriptor>;

// Order-independent digest of a whole table, used for the master/worker
// metadata consistency check.
std::uint64_t tableHash(const DescriptorTable& t);

}  // namespace gridmath
