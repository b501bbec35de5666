// SPDX-License-Identifier: Apache-2.0
#include "gridmath/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "gridmath/kernels.hpp"
#include "gridmath/layout.hpp"

namespace gridmath {
namespace scaling {

namespace {

struct CostLedger {
  const CostModel& cost;
  std::map<std::int64_t, double> comm;     // actor -> serialized link seconds
  std::map<std::int64_t, double> compute;  // actor -> compute seconds

  void message(std::int64_t src, std::int64_t dst, double bytes) {
    const double t = cost.latencySeconds + cost.inverseBandwidth * bytes;
    comm[src] += t;
    comm[dst] += t;
  }
  void work(std::int64_t actor, double elements) {
    compute[actor] += elements / cost.perWorkerComputeRate;
  }
  double elapsed() const {
    double worst = 0.0;
    for (const auto& [actor, t] : comm) {
      auto it = compute.find(actor);
      worst = std::max(worst, t + (it == compute.end() ? 0.0 : it->second));
    }
    for (const auto& [actor, t] : compute)
      if (!comm.count(actor)) worst = std::max(worst, t);
    return worst;
  }
};

constexpr std::int64_t kMaster = -1;
constexpr double kOpBytes = 110;  // one encoded control descriptor

// Prices one planned op: the control broadcast, every planned piece
// transfer, and the per-worker arithmetic.
void priceGemm(CostLedger& ledger, const DescriptorTable& table, const OpDescriptor& op,
               std::uint32_t workers) {
  const kernels::GemmPlan plan = kernels::planGemm(table, op, workers);
  for (std::uint32_t w = 0; w < workers; ++w) ledger.message(kMaster, w, kOpBytes);
  const std::size_t eb = bytesOf(table.at(op.ids[0]).precision);
  for (const RegionNeed& need : plan.needs) {
    if (need.viaReplica) continue;
    for (const PieceRoute& piece : need.pieces)
      if (piece.src != need.consumer)
        ledger.message(piece.src, need.consumer,
                       static_cast<double>(piece.rect.elements() * eb));
  }
  const MatrixDescriptor& c = table.at(op.ids[2]);
  for (const auto& [e, owner] : c.layout.tiles)
    ledger.work(owner.rank, static_cast<double>(e.elements()) * static_cast<double>(plan.k));
}

// Owners push their bytes to every peer.
void priceReplication(CostLedger& ledger, const MatrixDescriptor& d, std::uint32_t workers,
                      double chunkBytes) {
  for (std::uint32_t w = 0; w < workers; ++w) ledger.message(kMaster, w, kOpBytes);
  if (workers <= 1) return;
  for (const auto& [e, owner] : d.layout.tiles) {
    const double bytes = static_cast<double>(e.elements() * bytesOf(d.precision));
    const double chunks = std::max(1.0, std::ceil(bytes / chunkBytes));
    for (std::uint32_t peer = 0; peer < workers; ++peer) {
      if (peer == owner.rank) continue;
      // chunked: one alpha per chunk, bytes spread across them
      ledger.comm[owner.rank] +=
          chunks * ledger.cost.latencySeconds + ledger.cost.inverseBandwidth * bytes;
      ledger.comm[peer] +=
          chunks * ledger.cost.latencySeconds + ledger.cost.inverseBandwidth * bytes;
    }
  }
}

MatrixDescriptor makeDesc(std::uint64_t id, std::uint64_t rows, std::uint64_t cols,
                          const Layout& layout, bool replicated = false) {
  MatrixDescriptor d;
  d.matrixId = id;
  d.rows = rows;
  d.cols = cols;
  d.precision = Precision::Single;
  d.layout = layout;
  d.version = 0;
  if (replicated) d.replicatedVersion = 0;
  return d;
}

OpDescriptor gemmOp(std::uint64_t a, std::uint64_t b, std::uint64_t c, bool transA = false,
                    bool transB = false) {
  OpDescriptor op;
  op.opcode = OpCode::Gemm;
  op.ids[0] = a;
  op.ids[1] = b;
  op.ids[2] = c;
  op.s0 = 1.0;
  op.s1 = 0.0;
  op.flags[0] = transA;
  op.flags[1] = transB;
  op.flags[2] = 1;
  return op;
}

}  // namespace

ScalePoint gemmScalePoint(std::uint64_t n, std::uint32_t workers, const CostModel& cost) {
  const auto group = makeWorkerGroup(workers);
  DescriptorTable table;
  table[1] = makeDesc(1, n, n, makeRowBlockLayout(n, n, group));
  table[2] = makeDesc(2, n, n, makeRowBlockLayout(n, n, group));
  table[3] = makeDesc(3, n, n, makeRowBlockLayout(n, n, group));
  CostLedger ledger{cost, {}, {}};
  priceGemm(ledger, table, gemmOp(1, 2, 3), workers);
  ScalePoint p;
  p.workers = workers;
  p.elapsedSeconds = ledger.elapsed();
  p.throughput = 2.0 * static_cast<double>(n) * n * n / p.elapsedSeconds;
  return p;
}

ScalePoint trainingScalePoint(std::uint64_t batch, const std::vector<std::uint32_t>& dims,
                              std::uint32_t workers, const CostModel& cost) {
  const auto group = makeWorkerGroup(workers);
  DescriptorTable table;
  std::uint64_t next = 1;
  std::vector<std::uint64_t> acts, weights, deltas, dws;
  acts.push_back(next);
  table[next] = makeDesc(next, batch, dims[0], makeRowBlockLayout(batch, dims[0], group));
  ++next;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    weights.push_back(next);
    table[next] = makeDesc(next, dims[l], dims[l + 1],
                           makeColBlockLayout(dims[l], dims[l + 1], group), /*replicated=*/true);
    ++next;
    acts.push_back(next);
    table[next] = makeDesc(next, batch, dims[l + 1], makeRowBlockLayout(batch, dims[l + 1], group));
    ++next;
    deltas.push_back(next);
    table[next] = makeDesc(next, batch, dims[l + 1], makeRowBlockLayout(batch, dims[l + 1], group));
    ++next;
    dws.push_back(next);
    table[next] =
        makeDesc(next, dims[l], dims[l + 1], makeColBlockLayout(dims[l], dims[l + 1], group));
    ++next;
  }

  CostLedger ledger{cost, {}, {}};
  const std::size_t L = weights.size();
  // forward: act[l] x W[l] -> act[l+1] (weights read from replicas)
  for (std::size_t l = 0; l < L; ++l)
    priceGemm(ledger, table, gemmOp(acts[l], weights[l], acts[l + 1]), workers);
  // backward: dW[l] = act[l]^T x delta[l]; delta[l-1] = delta[l] x W[l]^T
  for (std::size_t l = L; l-- > 0;) {
    priceGemm(ledger, table, gemmOp(acts[l], deltas[l], dws[l], true, false), workers);
    if (l > 0) priceGemm(ledger, table, gemmOp(deltas[l], weights[l], deltas[l - 1], false, true),
                         workers);
  }
  // parameter replication after the update
  for (std::size_t l = 0; l < L; ++l)
    priceReplication(ledger, table.at(weights[l]), workers, 1 << 20);

  ScalePoint p;
  p.workers = workers;
  p.elapsedSeconds = ledger.elapsed();
  p.throughput = static_cast<double>(batch) / p.elapsedSeconds;
  return p;
}

std::vector<ScalePoint> gemmScalingCurve(std::uint64_t n,
                                         const std::vector<std::uint32_t>& workerCounts,
                                         const CostModel& cost) {
  std::vector<ScalePoint> out;
  for (std::uint32_t p : workerCounts) out.push_back(gemmScalePoint(n, p, cost));
  return out;
}

std::vector<ScalePoint> trainingScalingCurve(std::uint64_t batch,
                                             const std::vector<std::uint32_t>& dims,
                                             const std::vector<std::uint32_t>& workerCounts,
                                             const CostModel& cost) {
  std::vector<ScalePoint> out;
  for (std::uint32_t p : workerCounts) out.push_back(trainingScalePoint(batch, dims, p, cost));
  return out;
}

}  // namespace scaling
}  // namespace gridmath
