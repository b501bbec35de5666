// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "gridmath/fabric.hpp"

namespace gridmath {
namespace scaling {

struct ScalePoint {
  std::uint32_t workers = 0;
  double elapsedSeconds = 0.0;
  double throughput = 0.0;  // flop/s for gemm, samples/s for training
};

// Analytic strong-scaling curves driven by the real communication planner:
// the per-worker compute elements and per-link transfers come from the same
// plans the runtime executes, priced with the alpha-beta cost model. Each
// actor's link is serialized; elapsed time is the worst actor.

// n x n x n GEMM, row-block operands over P workers.
ScalePoint gemmScalePoint(std::uint64_t n, std::uint32_t workers, const CostModel& cost);

// One SGD iteration of an MLP (row-split activations, column-split weights,
// full parameter replication after the update), at a fixed batch size.
ScalePoint trainingScalePoint(std::uint64_t batch, const std::vector<std::uint32_t>& dims,
                              std::uint32_t workers, const CostModel& cost);

std::vector<ScalePoint> gemmScalingCurve(std::uint64_t n,
                                         const std::vector<std::uint32_t>& workerCounts,
                                         const CostModel& cost);
std::vector<ScalePoint> trainingScalingCurve(std::uint64_t batch,
                                             const std::vector<std::uint32_t>& dims,
                                             const std::vector<std::uint32_t>& workerCounts,
                                             const CostModel& cost);

}  // namespace scaling
}  // namespace gridmath
