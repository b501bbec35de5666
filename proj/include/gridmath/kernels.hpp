// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "gridmath/descriptor.hpp"
#include "gridmath/ops.hpp"
#include "gridmath/pieces.hpp"

namespace gridmath {

class WorkerRuntime;
class Session;
class DistMatrix;

namespace kernels {

// Fixed k-panel width. Accumulation is per element, ascending k, with panel
// boundaries at multiples of this constant, so deterministic-mode results
// do not depend on tile layouts or worker counts.
inline constexpr std::uint64_t kGemmPanelWidth = 256;

// Shape and policy checks, run by the master before an op is broadcast.
// Throws on violations so workers only ever see well-formed descriptors.
void validate(const DescriptorTable& t, const OpDescriptor& op, std::uint32_t workerCount);

// Worker-side execution of one op.
void execute(WorkerRuntime& w, const OpDescriptor& op);

Precision computePrecision(std::initializer_list<Precision> operands);

struct Interval {
  std::uint64_t lo = 0, hi = 0;  // half-open
};

struct GemmPlan {
  std::uint64_t m = 0, n = 0, k = 0;
  std::uint64_t panels = 0;
  bool transA = false, transB = false;
  bool deterministic = true;
  Precision computeAs = Precision::Single;
  std::vector<std::vector<Interval>> rowIntervals;  // per worker, ascending, disjoint
  std::vector<std::vector<Interval>> colIntervals;
  // All gather needs in plan order: panel-major, then worker, then A row
  // intervals, then B col intervals.
  std::vector<RegionNeed> needs;
};

GemmPlan planGemm(const DescriptorTable& t, const OpDescriptor& op, std::uint32_t workerCount);

// Scatter (master -> tile owners) and gather (owners -> master) plans for
// full-matrix data movement; one piece per tile in layout order.
std::vector<PieceRoute> planScatter(const MatrixDescriptor& d);
std::vector<PieceRoute> planGather(const MatrixDescriptor& d);

// Row-leader plan for the loss gather: one (band, labels) need pair per tile
// containing column 0, plus the piece ids of the term payloads each leader
// streams to the master.
struct LossPlan {
  std::vector<RegionNeed> needs;  // band need then label need, per leader
  std::vector<TileExtent> leaders;
  std::vector<std::uint32_t> leaderOwners;
  std::uint32_t firstOutPiece = 0;
};
LossPlan planLogLoss(const DescriptorTable& t, const OpDescriptor& op);

struct ConvGeometry {
  std::uint32_t batch = 0;
  std::uint32_t channels = 0, height = 0, width = 0;
  std::uint32_t kernels = 0, kh = 0, kw = 0;
  std::uint32_t stride = 1, pad = 0;

  std::uint32_t outH() const { return (height + 2 * pad - kh) / stride + 1; }
  std::uint32_t outW() const { return (width + 2 * pad - kw) / stride + 1; }
  std::vector<std::uint8_t> encode() const;
  static ConvGeometry decode(const std::vector<std::uint8_t>& blob);
};

}  // namespace kernels
}  // namespace gridmath
