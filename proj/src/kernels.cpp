// SPDX-License-Identifier: Apache-2.0
#include "gridmath/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gridmath/worker.hpp"

namespace gridmath {

// Private bridge into the worker runtime for kernel executors.
struct WorkerAccess {
  static void applyMeta(WorkerRuntime& w, const OpDescriptor& op) {
    w.applyMetadataAndInvalidate(op);
  }
  static void startReplication(WorkerRuntime& w, std::uint64_t id, std::uint64_t chunk) {
    w.startReplication(id, chunk);
  }
  static void setSeed(WorkerRuntime& w, std::uint64_t s) { w.seed_ = s; }
};

namespace kernels {

namespace {

template <typename T>
void convertToT(const std::uint8_t* src, Precision p, T* dst, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
    if (p == Precision::Single) {
      std::memcpy(dst, src, n * 4);
      return;
    }
  } else {
    if (p == Precision::Double) {
      std::memcpy(dst, src, n * 8);
      return;
    }
  }
  for (std::size_t i = 0; i < n; ++i) dst[i] = loadScalar<T>(src, p, i);
}

// Raw storage bytes of a sub-rectangle of one of my tiles.
std::vector<std::uint8_t> packFromStore(WorkerRuntime& w, const MatrixDescriptor& d,
                                        const Rect& rect) {
  Tile& t = w.store().tileContaining(d.matrixId, rect);
  const std::size_t eb = bytesOf(d.precision);
  std::vector<std::uint8_t> out(rect.elements() * eb);
  packRect(t.buf.data(), t.extent, rect, eb, out.data());
  return out;
}

// Pushes every piece this worker owns for needs consumed elsewhere.
void sendPlannedPieces(WorkerRuntime& w, const DescriptorTable& t,
                       const std::vector<RegionNeed>& needs, std::uint64_t execId) {
  for (const RegionNeed& need : needs) {
    if (need.viaReplica) continue;
    const MatrixDescriptor& d = t.at(need.matrixId);
    for (const PieceRoute& piece : need.pieces) {
      if (piece.src != w.rank() || piece.consumer == w.rank()) continue;
      w.sendOpPiece(piece.consumer, execId, piece.pieceId, packFromStore(w, d, piece.rect));
    }
  }
}

template <typename T>
void copyIntoSlab(Slab<T>& slab, const Rect& piece, const std::uint8_t* bytes, Precision p) {
  const std::size_t eb = bytesOf(p);
  for (std::uint64_t r = piece.r0; r < piece.r1; ++r) {
    T* dst = slab.row(r) + (piece.c0 - slab.rect.c0);
    convertToT<T>(bytes + (r - piece.r0) * piece.cols() * eb, p, dst, piece.cols());
  }
}

template <typename T>
Slab<T> assembleNeed(WorkerRuntime& w, const DescriptorTable& t, const RegionNeed& need,
                     std::uint64_t execId) {
  const MatrixDescriptor& d = t.at(need.matrixId);
  Slab<T> slab;
  slab.rect = need.rect;
  slab.data.resize(need.rect.elements());
  if (need.viaReplica) {
    w.waitReplicaValid(d.matrixId);
    const std::uint8_t* full = w.replicaBytes(d.matrixId);
    const std::size_t eb = bytesOf(d.precision);
    for (std::uint64_t r = need.rect.r0; r < need.rect.r1; ++r)
      convertToT<T>(full + (r * d.cols + need.rect.c0) * eb, d.precision, slab.row(r),
                    need.rect.cols());
    return slab;
  }
  for (const PieceRoute& piece : need.pieces) {
    if (piece.src == w.rank()) {
      const auto bytes = packFromStore(w, d, piece.rect);
      copyIntoSlab(slab, piece.rect, bytes.data(), d.precision);
    } else {
      const auto bytes = w.takePiece(execId, piece.pieceId);
      copyIntoSlab(slab, piece.rect, bytes.data(), d.precision);
    }
  }
  return slab;
}

bool needReady(const WorkerRuntime& w, const RegionNeed& need, std::uint64_t execId) {
  if (need.viaReplica) return true;  // replica waits happen during assembly
  for (const PieceRoute& piece : need.pieces)
    if (piece.src != w.rank() && !w.pieceReady(execId, piece.pieceId)) return false;
  return true;
}

std::vector<Interval> mergeIntervals(std::vector<Interval> v) {
  std::sort(v.begin(), v.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  std::vector<Interval> out;
  for (const Interval& i : v) {
    if (!out.empty() && i.lo <= out.back().hi)
      out.back().hi = std::max(out.back().hi, i.hi);
    else
      out.push_back(i);
  }
  return out;
}

std::size_t intervalIndex(const std::vector<Interval>& v, std::uint64_t x) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (x >= v[i].lo && x < v[i].hi) return i;
  throw Error("interval lookup failed");
}

const MatrixDescriptor& lookup(const DescriptorTable& t, std::uint64_t id) {
  auto it = t.find(id);
  if (it == t.end()) throw Error("unknown matrix id " + std::to_string(id));
  return it->second;
}

}  // namespace

Precision computePrecision(std::initializer_list<Precision> operands) {
  for (Precision p : operands)
    if (p == Precision::Double) return Precision::Double;
  return Precision::Single;
}

std::vector<std::uint8_t> ConvGeometry::encode() const {
  WireWriter w;
  w.u32(batch);
  w.u32(channels);
  w.u32(height);
  w.u32(width);
  w.u32(kernels);
  w.u32(kh);
  w.u32(kw);
  w.u32(stride);
  w.u32(pad);
  return w.take();
}

ConvGeometry ConvGeometry::decode(const std::vector<std::uint8_t>& blob) {
  WireReader r(blob);
  ConvGeometry g;
  g.batch = r.u32();
  g.channels = r.u32();
  g.height = r.u32();
  g.width = r.u32();
  g.kernels = r.u32();
  g.kh = r.u32();
  g.kw = r.u32();
  g.stride = r.u32();
  g.pad = r.u32();
  return g;
}

std::vector<PieceRoute> planScatter(const MatrixDescriptor& d) {
  std::vector<PieceRoute> routes;
  std::uint32_t pieceId = 0;
  for (const auto& [e, owner] : d.layout.tiles)
    routes.push_back({pieceId++, kMasterRank, owner.rank, d.matrixId, Rect::ofExtent(e)});
  return routes;
}

std::vector<PieceRoute> planGather(const MatrixDescriptor& d) {
  std::vector<PieceRoute> routes;
  std::uint32_t pieceId = 0;
  for (const auto& [e, owner] : d.layout.tiles)
    routes.push_back({pieceId++, owner.rank, kMasterRank, d.matrixId, Rect::ofExtent(e)});
  return routes;
}

LossPlan planLogLoss(const DescriptorTable& t, const OpDescriptor& op) {
  const MatrixDescriptor& p = lookup(t, op.ids[0]);
  const MatrixDescriptor& labels = lookup(t, op.ids[1]);
  LossPlan plan;
  NeedPlanner planner;
  for (const auto& [e, owner] : p.layout.tiles) {
    if (e.colStart != 0) continue;
    planner.addNeed(p, Rect{e.rowStart, e.rowEnd(), 0, p.cols}, owner.rank, false);
    planner.addNeed(labels, Rect{e.rowStart, e.rowEnd(), 0, 1}, owner.rank, true);
    plan.leaders.push_back(e);
    plan.leaderOwners.push_back(owner.rank);
  }
  plan.firstOutPiece = planner.pieceCount();
  plan.needs = std::move(planner.needs());
  return plan;
}

GemmPlan planGemm(const DescriptorTable& t, const OpDescriptor& op, std::uint32_t workerCount) {
  const MatrixDescriptor& a = lookup(t, op.ids[0]);
  const MatrixDescriptor& b = lookup(t, op.ids[1]);
  const MatrixDescriptor& c = lookup(t, op.ids[2]);
  GemmPlan plan;
  plan.transA = op.flags[0] != 0;
  plan.transB = op.flags[1] != 0;
  plan.deterministic = op.flags[2] != 0;
  plan.m = c.rows;
  plan.n = c.cols;
  plan.k = plan.transA ? a.rows : a.cols;
  plan.computeAs = computePrecision({a.precision, b.precision, c.precision});
  plan.panels = (plan.k + kGemmPanelWidth - 1) / kGemmPanelWidth;

  plan.rowIntervals.resize(workerCount);
  plan.colIntervals.resize(workerCount);
  {
    std::vector<std::vector<Interval>> rows(workerCount), cols(workerCount);
    for (const auto& [e, owner] : c.layout.tiles) {
      rows[owner.rank].push_back({e.rowStart, e.rowEnd()});
      cols[owner.rank].push_back({e.colStart, e.colEnd()});
    }
    for (std::uint32_t w = 0; w < workerCount; ++w) {
      plan.rowIntervals[w] = mergeIntervals(std::move(rows[w]));
      plan.colIntervals[w] = mergeIntervals(std::move(cols[w]));
    }
  }

  if (op.s0 == 0.0) return plan;  // alpha == 0: A and B are never read

  NeedPlanner planner;
  for (std::uint64_t p = 0; p < plan.panels; ++p) {
    const std::uint64_t k0 = p * kGemmPanelWidth;
    const std::uint64_t k1 = std::min<std::uint64_t>(plan.k, k0 + kGemmPanelWidth);
    for (std::uint32_t w = 0; w < workerCount; ++w) {
      for (const Interval& iv : plan.rowIntervals[w]) {
        const Rect rect = plan.transA ? Rect{k0, k1, iv.lo, iv.hi} : Rect{iv.lo, iv.hi, k0, k1};
        planner.addNeed(a, rect, w, true);
      }
      for (const Interval& iv : plan.colIntervals[w]) {
        const Rect rect = plan.transB ? Rect{iv.lo, iv.hi, k0, k1} : Rect{k0, k1, iv.lo, iv.hi};
        planner.addNeed(b, rect, w, true);
      }
    }
  }
  plan.needs = std::move(planner.needs());
  return plan;
}

// ---------------------------------------------------------------------------
// validation

namespace {

void requireDistinct(const OpDescriptor& op, std::initializer_list<int> slots) {
  for (int i : slots)
    for (int j : slots)
      if (i != j && op.ids[i] == op.ids[j])
        throw Error("operands must be distinct matrices");
}

}  // namespace

void validate(const DescriptorTable& t, const OpDescriptor& op, std::uint32_t workerCount) {
  switch (op.opcode) {
    case OpCode::CreateMatrix: {
      WireReader r(op.blob);
      const MatrixDescriptor d = decodeDescriptor(r);
      if (d.rows == 0 || d.cols == 0) throw Error("createMatrix: empty shape");
      const LayoutReport rep = validateLayout(d.rows, d.cols, d.layout, workerCount);
      if (!rep.ok()) throw Error("createMatrix: invalid layout: " + rep.detail);
      if (t.count(d.matrixId)) throw Error("createMatrix: duplicate id");
      return;
    }
    case OpCode::Reshape: {
      const MatrixDescriptor& old = lookup(t, op.ids[0]);
      WireReader r(op.blob);
      const MatrixDescriptor d = decodeDescriptor(r);
      if (d.rows != old.rows || d.cols != old.cols)
        throw Error("reshape: shape must be preserved");
      const LayoutReport rep = validateLayout(d.rows, d.cols, d.layout, workerCount);
      if (!rep.ok()) throw Error("reshape: invalid layout: " + rep.detail);
      return;
    }
    case OpCode::DestroyMatrix:
    case OpCode::SetData:
    case OpCode::GetData:
    case OpCode::SetConst:
    case OpCode::SoftmaxRows:
    case OpCode::ReplicateStart:
      (void)lookup(t, op.ids[0]);
      return;
    case OpCode::Gemm: {
      const MatrixDescriptor& a = lookup(t, op.ids[0]);
      const MatrixDescriptor& b = lookup(t, op.ids[1]);
      const MatrixDescriptor& c = lookup(t, op.ids[2]);
      requireDistinct(op, {0, 2});
      requireDistinct(op, {1, 2});
      const bool ta = op.flags[0], tb = op.flags[1];
      const std::uint64_t m = ta ? a.cols : a.rows;
      const std::uint64_t k = ta ? a.rows : a.cols;
      const std::uint64_t kb = tb ? b.cols : b.rows;
      const std::uint64_t n = tb ? b.rows : b.cols;
      if (k != kb || c.rows != m || c.cols != n)
        throw Error("gemm: dimension mismatch (" + std::to_string(m) + "x" + std::to_string(k) +
                    " * " + std::to_string(kb) + "x" + std::to_string(n) + " -> " +
                    std::to_string(c.rows) + "x" + std::to_string(c.cols) + ")");
      return;
    }
    case OpCode::AddRowColSum: {
      const MatrixDescriptor& a = lookup(t, op.ids[0]);
      const MatrixDescriptor& row = lookup(t, op.ids[1]);
      const MatrixDescriptor& col = lookup(t, op.ids[2]);
      requireDistinct(op, {0, 1, 2});
      if (row.rows != a.rows || row.cols != 1)
        throw Error("addRowColSum: rowAcc must be rows x 1");
      if (col.rows != 1 || col.cols != a.cols)
        throw Error("addRowColSum: colAcc must be 1 x cols");
      return;
    }
    case OpCode::EwUnary: {
      const MatrixDescriptor& x = lookup(t, op.ids[0]);
      const MatrixDescriptor& d = lookup(t, op.ids[1]);
      if (x.rows != d.rows || x.cols != d.cols) throw Error("elementwise: shape mismatch");
      return;
    }
    case OpCode::EwBinary: {
      const MatrixDescriptor& x = lookup(t, op.ids[0]);
      const MatrixDescriptor& y = lookup(t, op.ids[1]);
      const MatrixDescriptor& d = lookup(t, op.ids[2]);
      const auto kind = static_cast<BinaryKind>(op.flags[0]);
      if (kind == BinaryKind::BiasAdd) {
        if (y.rows != 1 || y.cols != x.cols) throw Error("biasAdd: bias must be 1 x cols");
      } else if (kind == BinaryKind::Copy) {
        // y unused
      } else if (x.rows != y.rows || x.cols != y.cols) {
        throw Error("elementwise: shape mismatch");
      }
      if (x.rows != d.rows || x.cols != d.cols) throw Error("elementwise: shape mismatch");
      return;
    }
    case OpCode::SubtractOneHot:
    case OpCode::LogLossGather: {
      const MatrixDescriptor& p = lookup(t, op.ids[0]);
      const MatrixDescriptor& labels = lookup(t, op.ids[1]);
      if (labels.rows != p.rows || labels.cols != 1)
        throw Error("labels must be rows x 1");
      return;
    }
    case OpCode::Im2col: {
      const MatrixDescriptor& in = lookup(t, op.ids[0]);
      const MatrixDescriptor& patches = lookup(t, op.ids[1]);
      const ConvGeometry g = ConvGeometry::decode(op.blob);
      if (g.stride == 0) throw Error("conv: stride must be positive");
      if (g.height + 2 * g.pad < g.kh || g.width + 2 * g.pad < g.kw)
        throw Error("conv: kernel larger than padded input");
      if (in.rows != g.batch ||
          in.cols != static_cast<std::uint64_t>(g.channels) * g.height * g.width)
        throw Error("conv: input must be N x (C*H*W)");
      const std::uint64_t prows = static_cast<std::uint64_t>(g.batch) * g.outH() * g.outW();
      const std::uint64_t pcols = static_cast<std::uint64_t>(g.channels) * g.kh * g.kw;
      if (patches.rows != prows || patches.cols != pcols)
        throw Error("conv: patches must be (N*H'*W') x (C*R*S)");
      return;
    }
    case OpCode::ConvRepack: {
      const MatrixDescriptor& src = lookup(t, op.ids[0]);
      const MatrixDescriptor& dst = lookup(t, op.ids[1]);
      const std::uint64_t kk = op.ids[2];
      const std::uint64_t hw = op.ids[3];
      if (src.cols != kk || src.rows % hw != 0) throw Error("convRepack: bad source shape");
      if (dst.rows != src.rows / hw || dst.cols != kk * hw)
        throw Error("convRepack: bad destination shape");
      return;
    }
    default:
      return;
  }
}

// ---------------------------------------------------------------------------
// executors

namespace {

void zeroTile(Tile& t) { std::memset(t.buf.data(), 0, t.buf.size()); }

void execCreate(WorkerRuntime& w, const OpDescriptor& op) {
  WorkerAccess::applyMeta(w, op);
  WireReader r(op.blob);
  const MatrixDescriptor d = decodeDescriptor(r);
  const std::size_t eb = bytesOf(d.precision);
  std::vector<Tile> mine;
  for (const auto& [e, owner] : d.layout.tiles) {
    if (owner.rank != w.rank()) continue;
    Tile t;
    t.extent = e;
    t.buf = w.pool().alloc(e.elements() * eb);
    zeroTile(t);
    mine.push_back(std::move(t));
  }
  w.store().install(d.matrixId, std::move(mine));
}

void execDestroy(WorkerRuntime& w, const OpDescriptor& op) {
  WorkerAccess::applyMeta(w, op);
  w.store().remove(op.ids[0]);
  w.dropReplica(op.ids[0]);
}

void execSetData(WorkerRuntime& w, const OpDescriptor& op) {
  WorkerAccess::applyMeta(w, op);
  const MatrixDescriptor& d = w.descriptor(op.ids[0]);
  const std::size_t eb = bytesOf(d.precision);
  for (const PieceRoute& piece : planScatter(d)) {
    if (piece.consumer != w.rank()) continue;
    const auto bytes = w.takePiece(op.execId, piece.pieceId);
    Tile& t = w.store().tileContaining(d.matrixId, piece.rect);
    unpackRect(t.buf.data(), t.extent, piece.rect, eb, bytes.data());
  }
}

void execGetData(WorkerRuntime& w, const OpDescriptor& op) {
  const MatrixDescriptor& d = w.descriptor(op.ids[0]);
  for (const PieceRoute& piece : planGather(d)) {
    if (piece.src != w.rank()) continue;
    w.sendOpPiece(kMasterRank, op.execId, piece.pieceId,
                  packFromStore(w, d, piece.rect));
  }
}

void execSetConst(WorkerRuntime& w, const OpDescriptor& op) {
  WorkerAccess::applyMeta(w, op);
  const MatrixDescriptor& d = w.descriptor(op.ids[0]);
  const auto* tiles = w.store().find(op.ids[0]);
  if (!tiles) return;
  for (const Tile& t : *tiles)
    for (std::uint64_t i = 0; i < t.extent.elements(); ++i)
      storeScalar<double>(const_cast<Tile&>(t).buf.data(), d.precision, i, op.s0);
}

template <typename T>
void runGemm(WorkerRuntime& w, const OpDescriptor& op, const GemmPlan& plan) {
  const DescriptorTable& table = w.descriptors();
  const MatrixDescriptor& c = table.at(op.ids[2]);
  const T alpha = static_cast<T>(op.s0);
  const T beta = static_cast<T>(op.s1);

  struct TileAcc {
    Tile* tile;
    std::vector<T> acc;
    std::size_t rowIval, colIval;
  };
  std::vector<TileAcc> accs;
  if (auto* tiles = w.store().find(c.matrixId)) {
    for (Tile& t : const_cast<std::vector<Tile>&>(*tiles)) {
      TileAcc a;
      a.tile = &t;
      a.acc.assign(t.extent.elements(), T(0));
      if (beta != T(0))
        for (std::uint64_t i = 0; i < t.extent.elements(); ++i)
          a.acc[i] = beta * loadScalar<T>(t.buf.data(), c.precision, i);
      a.rowIval = intervalIndex(plan.rowIntervals[w.rank()], t.extent.rowStart);
      a.colIval = intervalIndex(plan.colIntervals[w.rank()], t.extent.colStart);
      accs.push_back(std::move(a));
    }
  }

  if (alpha != T(0) && !accs.empty()) {
    // Index my needs by (panel, operand, interval).
    const std::size_t nRow = plan.rowIntervals[w.rank()].size();
    const std::size_t nCol = plan.colIntervals[w.rank()].size();
    std::vector<const RegionNeed*> myA(plan.panels * nRow, nullptr);
    std::vector<const RegionNeed*> myB(plan.panels * nCol, nullptr);
    {
      std::size_t cursor = 0;
      for (std::uint64_t p = 0; p < plan.panels; ++p) {
        for (std::uint32_t ww = 0; ww < plan.rowIntervals.size(); ++ww) {
          for (std::size_t i = 0; i < plan.rowIntervals[ww].size(); ++i, ++cursor)
            if (ww == w.rank()) myA[p * nRow + i] = &plan.needs[cursor];
          for (std::size_t i = 0; i < plan.colIntervals[ww].size(); ++i, ++cursor)
            if (ww == w.rank()) myB[p * nCol + i] = &plan.needs[cursor];
        }
      }
    }

    auto processPanel = [&](std::uint64_t p) {
      const std::uint64_t k0 = p * kGemmPanelWidth;
      const std::uint64_t k1 = std::min<std::uint64_t>(plan.k, k0 + kGemmPanelWidth);
      std::vector<Slab<T>> aSlabs(nRow), bSlabs(nCol);
      for (std::size_t i = 0; i < nRow; ++i)
        aSlabs[i] = assembleNeed<T>(w, table, *myA[p * nRow + i], op.execId);
      for (std::size_t i = 0; i < nCol; ++i)
        bSlabs[i] = assembleNeed<T>(w, table, *myB[p * nCol + i], op.execId);

      w.fabric().trace().record(w.rank(), EventKind::OpComputeStart, op.execId,
                                static_cast<std::uint64_t>(op.opcode));
      std::uint64_t elems = 0;
      for (TileAcc& a : accs) {
        const TileExtent& e = a.tile->extent;
        const Slab<T>& A = aSlabs[a.rowIval];
        const Slab<T>& B = bSlabs[a.colIval];
        for (std::uint64_t i = e.rowStart; i < e.rowEnd(); ++i) {
          T* accRow = a.acc.data() + (i - e.rowStart) * e.colCount;
          for (std::uint64_t kk = k0; kk < k1; ++kk) {
            const T av = plan.transA ? A.at(kk, i) : A.at(i, kk);
            const T aa = alpha * av;
            if (!plan.transB) {
              const T* brow = B.row(kk) + (e.colStart - B.rect.c0);
              for (std::uint64_t j = 0; j < e.colCount; ++j) accRow[j] += aa * brow[j];
            } else {
              for (std::uint64_t j = 0; j < e.colCount; ++j)
                accRow[j] += aa * B.at(e.colStart + j, kk);
            }
          }
        }
        elems += e.elements() * (k1 - k0);
      }
      w.fabric().addCompute(w.rank(), elems);
      w.fabric().trace().record(w.rank(), EventKind::OpComputeEnd, op.execId,
                                static_cast<std::uint64_t>(op.opcode));
    };

    if (plan.deterministic) {
      for (std::uint64_t p = 0; p < plan.panels; ++p) processPanel(p);
    } else {
      // Fast mode: consume panels as their pieces land.
      std::vector<bool> done(plan.panels, false);
      std::uint64_t remaining = plan.panels;
      auto panelReady = [&](std::uint64_t p) {
        for (std::size_t i = 0; i < nRow; ++i)
          if (!needReady(w, *myA[p * nRow + i], op.execId)) return false;
        for (std::size_t i = 0; i < nCol; ++i)
          if (!needReady(w, *myB[p * nCol + i], op.execId)) return false;
        return true;
      };
      while (remaining > 0) {
        bool progressed = false;
        for (std::uint64_t p = 0; p < plan.panels; ++p) {
          if (done[p] || !panelReady(p)) continue;
          processPanel(p);
          done[p] = true;
          --remaining;
          progressed = true;
          break;
        }
        if (!progressed) w.pumpOnce(true);
      }
    }
  }

  for (TileAcc& a : accs)
    for (std::uint64_t i = 0; i < a.tile->extent.elements(); ++i)
      storeScalar<T>(a.tile->buf.data(), c.precision, i, a.acc[i]);
}

void execGemm(WorkerRuntime& w, const OpDescriptor& op) {
  WorkerAccess::applyMeta(w, op);
  const GemmPlan plan = planGemm(w.descriptors(), op, w.workerCount());
  sendPlannedPieces(w, w.descriptors(), plan.needs, op.execId);
  if (plan.computeAs == Precision::Double)
    runGemm<double>(w, op, plan);
  else
    runGemm<float>(w, op, plan);
}

// Deterministic row/col sums: accumulator owners gather whole bands and sum
// in ascending index order, so any layout reproduces the serial stream.
template <typename T>
void runRowColSumDet(WorkerRuntime& w, const OpDescriptor& op) {
  const DescriptorTable& table = w.descriptors();
  const MatrixDescriptor& a = table.at(op.ids[0]);
  const MatrixDescriptor& rowAcc = table.at(op.ids[1]);
  const MatrixDescriptor& colAcc = table.at(op.ids[2]);
  const T alpha = static_cast<T>(op.s0);

  NeedPlanner planner;
  for (const auto& [e, owner] : rowAcc.layout.tiles)
    planner.addNeed(a, Rect{e.rowStart, e.rowEnd(), 0, a.cols}, owner.rank, true);
  for (const auto& [e, owner] : colAcc.layout.tiles)
    planner.addNeed(a, Rect{0, a.rows, e.colStart, e.colEnd()}, owner.rank, true);
  sendPlannedPieces(w, table, planner.needs(), op.execId);

  std::size_t needIdx = 0;
  for (const auto& [e, owner] : rowAcc.layout.tiles) {
    const RegionNeed& need = planner.needs()[needIdx++];
    if (owner.rank != w.rank()) continue;
    const Slab<T> band = assembleNeed<T>(w, table, need, op.execId);
    Tile& t = w.store().tileContaining(rowAcc.matrixId, Rect::ofExtent(e));
    w.fabric().trace().record(w.rank(), EventKind::OpComputeStart, op.execId,
                              static_cast<std::uint64_t>(op.opcode));
    for (std::uint64_t i = e.rowStart; i < e.rowEnd(); ++i) {
      T sum = T(0);
      const T* row = band.row(i);
      for (std::uint64_t j = 0; j < a.cols; ++j) sum += row[j];
      const std::uint64_t idx = i - e.rowStart;
      const T cur = loadScalar<T>(t.buf.data(), rowAcc.precision, idx);
      storeScalar<T>(t.buf.data(), rowAcc.precision, idx, cur + alpha * sum);
    }
    w.fabric().addCompute(w.rank(), e.rowCount * a.cols);
    w.fabric().trace().record(w.rank(), EventKind::OpComputeEnd, op.execId,
                              static_cast<std::uint64_t>(op.opcode));
  }
  for (const auto& [e, owner] : colAcc.layout.tiles) {
    const RegionNeed& need = planner.needs()[needIdx++];
    if (owner.rank != w.rank()) continue;
    const Slab<T> band = assembleNeed<T>(w, table, need, op.execId);
    Tile& t = w.store().tileContaining(colAcc.matrixId, Rect::ofExtent(e));
    for (std::uint64_t j = e.colStart; j < e.colEnd(); ++j) {
      T sum = T(0);
      for (std::uint64_t i = 0; i < a.rows; ++i) sum += band.at(i, j);
      const std::uint64_t idx = j - e.colStart;
      const T cur = loadScalar<T>(t.buf.data(), colAcc.precision, idx);
      storeScalar<T>(t.buf.data(), colAcc.precision, idx, cur + alpha * sum);
    }
    w.fabric().addCompute(w.rank(), e.colCount * a.rows);
  }
}

// Fast mode: tile owners push partial sums, accumulator owners fold them in
// whatever order they arrive.
template <typename T>
void runRowColSumFast(WorkerRuntime& w, const OpDescriptor& op) {
  const DescriptorTable& table = w.descriptors();
  const MatrixDescriptor& a = table.at(op.ids[0]);
  const MatrixDescriptor& rowAcc = table.at(op.ids[1]);
  const MatrixDescriptor& colAcc = table.at(op.ids[2]);
  const T alpha = static_cast<T>(op.s0);

  struct PartRoute {
    std::uint32_t pieceId;
    std::uint32_t src, dst;
    const TileExtent* aTile;
    const TileExtent* accTile;
    bool forRows;
    std::uint64_t lo, hi;  // overlapped accumulator index range
  };
  std::vector<PartRoute> routes;
  std::uint32_t pieceId = 0;
  for (const auto& [ae, aOwner] : a.layout.tiles) {
    for (const auto& [re, rOwner] : rowAcc.layout.tiles) {
      const std::uint64_t lo = std::max(ae.rowStart, re.rowStart);
      const std::uint64_t hi = std::min(ae.rowEnd(), re.rowEnd());
      if (lo >= hi) continue;
      routes.push_back({pieceId++, aOwner.rank, rOwner.rank, &ae, &re, true, lo, hi});
    }
  }
  for (const auto& [ae, aOwner] : a.layout.tiles) {
    for (const auto& [ce, cOwner] : colAcc.layout.tiles) {
      const std::uint64_t lo = std::max(ae.colStart, ce.colStart);
      const std::uint64_t hi = std::min(ae.colEnd(), ce.colEnd());
      if (lo >= hi) continue;
      routes.push_back({pieceId++, aOwner.rank, cOwner.rank, &ae, &ce, false, lo, hi});
    }
  }

  auto partials = [&](const PartRoute& r) {
    std::vector<double> vals;
    vals.reserve(r.hi - r.lo);
    const Tile& t = w.store().tileContaining(a.matrixId, Rect::ofExtent(*r.aTile));
    for (std::uint64_t x = r.lo; x < r.hi; ++x) {
      T sum = T(0);
      if (r.forRows) {
        for (std::uint64_t j = r.aTile->colStart; j < r.aTile->colEnd(); ++j)
          sum += loadScalar<T>(t.buf.data(), a.precision,
                               (x - r.aTile->rowStart) * r.aTile->colCount +
                                   (j - r.aTile->colStart));
      } else {
        for (std::uint64_t i = r.aTile->rowStart; i < r.aTile->rowEnd(); ++i)
          sum += loadScalar<T>(t.buf.data(), a.precision,
                               (i - r.aTile->rowStart) * r.aTile->colCount +
                                   (x - r.aTile->colStart));
      }
      vals.push_back(static_cast<double>(sum));
    }
    return vals;
  };

  // Send my partials.
  for (const PartRoute& r : routes) {
    if (r.src != w.rank() || r.dst == w.rank()) continue;
    const auto vals = partials(r);
    WireWriter wr;
    for (double v : vals) wr.f64(v);
    w.sendOpPiece(r.dst, op.execId, r.pieceId, wr.take());
  }

  auto apply = [&](const PartRoute& r, const std::vector<double>& vals) {
    const MatrixDescriptor& acc = r.forRows ? rowAcc : colAcc;
    Tile& t = w.store().tileContaining(acc.matrixId, Rect::ofExtent(*r.accTile));
    for (std::uint64_t x = r.lo; x < r.hi; ++x) {
      const std::uint64_t idx =
          r.forRows ? x - r.accTile->rowStart : x - r.accTile->colStart;
      const T cur = loadScalar<T>(t.buf.data(), acc.precision, idx);
      storeScalar<T>(t.buf.data(), acc.precision, idx,
                     cur + alpha * static_cast<T>(vals[x - r.lo]));
    }
  };

  // Local contributions first, then remote ones as they arrive.
  std::vector<const PartRoute*> waiting;
  for (const PartRoute& r : routes) {
    if (r.dst != w.rank()) continue;
    if (r.src == w.rank())
      apply(r, partials(r));
    else
      waiting.push_back(&r);
  }
  while (!waiting.empty()) {
    bool progressed = false;
    for (auto it = waiting.begin(); it != waiting.end(); ++it) {
      if (!w.pieceReady(op.execId, (*it)->pieceId)) continue;
      const auto bytes = w.takePiece(op.execId, (*it)->pieceId);
      WireReader rd(bytes);
      std::vector<double> vals((*it)->hi - (*it)->lo);
      for (double& v : vals) v = rd.f64();
      apply(**it, vals);
      waiting.erase(it);
      progressed = true;
      break;
    }
    if (!progressed) w.pumpOnce(true);
  }
}

void execRowColSum(WorkerRuntime& w, const OpDescriptor& op) {
  WorkerAccess::applyMeta(w, op);
  const Precision t = computePrecision({w.descriptor(op.ids[0]).precision,
                                        w.descriptor(op.ids[1]).precision,
                                        w.descriptor(op.ids[2]).precision});
  const bool det = op.flags[0] != 0;
  if (t == Precision::Double)
    det ? runRowColSumDet<double>(w, op) : runRowColSumFast<double>(w, op);
  else
    det ? runRowColSumDet<float>(w, op) : runRowColSumFast<float>(w, op);
}

template <typename T>
void runElementwise(WorkerRuntime& w, const OpDescriptor& op) {
  const DescriptorTable& table = w.descriptors();
  const bool unary = op.opcode == OpCode::EwUnary;
  const MatrixDescriptor& x = table.at(op.ids[0]);
  const MatrixDescriptor* y = unary ? nullptr : &table.at(op.ids[1]);
  const MatrixDescriptor& dst = table.at(unary ? op.ids[1] : op.ids[2]);
  const auto ukind = static_cast<UnaryKind>(op.flags[0]);
  const auto bkind = static_cast<BinaryKind>(op.flags[0]);
  const T alpha = static_cast<T>(op.s0);
  const bool usesY = !unary && bkind != BinaryKind::Copy;

  NeedPlanner planner;
  for (const auto& [e, owner] : dst.layout.tiles) {
    const Rect r = Rect::ofExtent(e);
    planner.addNeed(x, r, owner.rank, true);
    if (usesY) {
      const Rect yr = (bkind == BinaryKind::BiasAdd) ? Rect{0, 1, e.colStart, e.colEnd()} : r;
      planner.addNeed(*y, yr, owner.rank, true);
    }
  }
  sendPlannedPieces(w, table, planner.needs(), op.execId);

  std::size_t needIdx = 0;
  for (const auto& [e, owner] : dst.layout.tiles) {
    const RegionNeed& xNeed = planner.needs()[needIdx++];
    const RegionNeed* yNeed = usesY ? &planner.needs()[needIdx++] : nullptr;
    if (owner.rank != w.rank()) continue;
    const Slab<T> xs = assembleNeed<T>(w, table, xNeed, op.execId);
    Slab<T> ys;
    if (yNeed) ys = assembleNeed<T>(w, table, *yNeed, op.execId);
    Tile& t = w.store().tileContaining(dst.matrixId, Rect::ofExtent(e));
    w.fabric().trace().record(w.rank(), EventKind::OpComputeStart, op.execId,
                              static_cast<std::uint64_t>(op.opcode));
    std::uint64_t idx = 0;
    for (std::uint64_t i = e.rowStart; i < e.rowEnd(); ++i) {
      for (std::uint64_t j = e.colStart; j < e.colEnd(); ++j, ++idx) {
        const T xv = xs.at(i, j);
        T out;
        if (unary) {
          out = (ukind == UnaryKind::Relu) ? (xv > T(0) ? xv : T(0)) : alpha * xv;
        } else {
          switch (bkind) {
            case BinaryKind::Add: out = xv + ys.at(i, j); break;
            case BinaryKind::Sub: out = xv - ys.at(i, j); break;
            case BinaryKind::Axpy: out = alpha * xv + ys.at(i, j); break;
            case BinaryKind::ReluGrad: out = xv > T(0) ? ys.at(i, j) : T(0); break;
            case BinaryKind::BiasAdd: out = xv + ys.at(0, j); break;
            case BinaryKind::Copy: out = xv; break;
            default: throw Error("bad elementwise kind");
          }
        }
        storeScalar<T>(t.buf.data(), dst.precision, idx, out);
      }
    }
    w.fabric().addCompute(w.rank(), e.elements());
    w.fabric().trace().record(w.rank(), EventKind::OpComputeEnd, op.execId,
                              static_cast<std::uint64_t>(op.opcode));
  }
}

void execElementwise(WorkerRuntime& w, const OpDescriptor& op) {
  WorkerAccess::applyMeta(w, op);
  const bool unary = op.opcode == OpCode::EwUnary;
  const Precision cp =
      unary ? computePrecision({w.descriptor(op.ids[0]).precision,
                                w.descriptor(op.ids[1]).precision})
            : computePrecision({w.descriptor(op.ids[0]).precision,
                                w.descriptor(op.ids[1]).precision,
                                w.descriptor(op.ids[2]).precision});
  if (cp == Precision::Double)
    runElementwise<double>(w, op);
  else
    runElementwise<float>(w, op);
}

// Row leaders (owners of the column-0 tiles) gather whole rows, compute
// (max, sumExp) ascending, and fan the stats back to every tile owner.
template <typename T>
void runSoftmax(WorkerRuntime& w, const OpDescriptor& op) {
  const DescriptorTable& table = w.descriptors();
  const MatrixDescriptor& a = table.at(op.ids[0]);

  NeedPlanner planner;
  for (const auto& [e, owner] : a.layout.tiles) {
    if (e.colStart != 0) continue;
    planner.addNeed(a, Rect{e.rowStart, e.rowEnd(), 0, a.cols}, owner.rank, false);
  }
  struct StatRoute {
    std::uint32_t pieceId;
    std::uint32_t src, dst;
    const TileExtent* tile;
    std::uint64_t lo, hi;  // row overlap
  };
  std::vector<StatRoute> statRoutes;
  std::uint32_t pieceId = planner.pieceCount();
  for (const auto& [le, lOwner] : a.layout.tiles) {
    if (le.colStart != 0) continue;
    for (const auto& [te, tOwner] : a.layout.tiles) {
      const std::uint64_t lo = std::max(le.rowStart, te.rowStart);
      const std::uint64_t hi = std::min(le.rowEnd(), te.rowEnd());
      if (lo >= hi) continue;
      statRoutes.push_back({pieceId++, lOwner.rank, tOwner.rank, &te, lo, hi});
    }
  }
  sendPlannedPieces(w, table, planner.needs(), op.execId);

  // Leader phase.
  std::map<std::uint64_t, std::pair<std::vector<double>, std::vector<double>>> statsByRow;
  std::size_t needIdx = 0;
  for (const auto& [le, lOwner] : a.layout.tiles) {
    if (le.colStart != 0) continue;
    const RegionNeed& need = planner.needs()[needIdx++];
    if (lOwner.rank != w.rank()) continue;
    const Slab<T> band = assembleNeed<T>(w, table, need, op.execId);
    std::vector<double> maxes(le.rowCount), sums(le.rowCount);
    for (std::uint64_t i = le.rowStart; i < le.rowEnd(); ++i) {
      const T* row = band.row(i);
      T m = row[0];
      for (std::uint64_t j = 1; j < a.cols; ++j) m = row[j] > m ? row[j] : m;
      T s = T(0);
      for (std::uint64_t j = 0; j < a.cols; ++j) s += std::exp(row[j] - m);
      maxes[i - le.rowStart] = static_cast<double>(m);
      sums[i - le.rowStart] = static_cast<double>(s);
    }
    statsByRow[le.rowStart] = {std::move(maxes), std::move(sums)};
    w.fabric().addCompute(w.rank(), le.rowCount * a.cols);
  }

  // Fan out stats.
  for (const StatRoute& r : statRoutes) {
    if (r.src != w.rank() || r.dst == w.rank()) continue;
    // Locate the leader band covering [lo, hi).
    const auto& stats = [&]() -> const std::pair<std::vector<double>, std::vector<double>>& {
      for (const auto& [start, st] : statsByRow)
        if (r.lo >= start && r.hi <= start + st.first.size()) return st;
      throw Error("softmax: leader stats missing");
    }();
    const std::uint64_t base = [&] {
      for (const auto& [start, st] : statsByRow)
        if (r.lo >= start && r.hi <= start + st.first.size()) return start;
      return std::uint64_t(0);
    }();
    WireWriter wr;
    for (std::uint64_t i = r.lo; i < r.hi; ++i) {
      wr.f64(stats.first[i - base]);
      wr.f64(stats.second[i - base]);
    }
    w.sendOpPiece(r.dst, op.execId, r.pieceId, wr.take());
  }

  // Apply phase: every owner rewrites its tiles with exp(x - m) / s.
  for (const StatRoute& r : statRoutes) {
    if (r.dst != w.rank()) continue;
    std::vector<double> maxes(r.hi - r.lo), sums(r.hi - r.lo);
    if (r.src == w.rank()) {
      bool found = false;
      for (const auto& [start, st] : statsByRow) {
        if (r.lo >= start && r.hi <= start + st.first.size()) {
          for (std::uint64_t i = r.lo; i < r.hi; ++i) {
            maxes[i - r.lo] = st.first[i - start];
            sums[i - r.lo] = st.second[i - start];
          }
          found = true;
          break;
        }
      }
      if (!found) throw Error("softmax: local stats missing");
    } else {
      const auto bytes = w.takePiece(op.execId, r.pieceId);
      WireReader rd(bytes);
      for (std::uint64_t i = 0; i < maxes.size(); ++i) {
        maxes[i] = rd.f64();
        sums[i] = rd.f64();
      }
    }
    Tile& t = w.store().tileContaining(a.matrixId, Rect::ofExtent(*r.tile));
    for (std::uint64_t i = r.lo; i < r.hi; ++i) {
      const T m = static_cast<T>(maxes[i - r.lo]);
      const T s = static_cast<T>(sums[i - r.lo]);
      for (std::uint64_t j = r.tile->colStart; j < r.tile->colEnd(); ++j) {
        const std::uint64_t idx =
            (i - r.tile->rowStart) * r.tile->colCount + (j - r.tile->colStart);
        const T xv = loadScalar<T>(t.buf.data(), a.precision, idx);
        storeScalar<T>(t.buf.data(), a.precision, idx, std::exp(xv - m) / s);
      }
    }
    w.fabric().addCompute(w.rank(), (r.hi - r.lo) * r.tile->colCount);
  }
}

void execSoftmax(WorkerRuntime& w, const OpDescriptor& op) {
  WorkerAccess::applyMeta(w, op);
  if (w.descriptor(op.ids[0]).precision == Precision::Double)
    runSoftmax<double>(w, op);
  else
    runSoftmax<float>(w, op);
}

template <typename T>
void runSubtractOneHot(WorkerRuntime& w, const OpDescriptor& op) {
  const DescriptorTable& table = w.descriptors();
  const MatrixDescriptor& p = table.at(op.ids[0]);
  const MatrixDescriptor& labels = table.at(op.ids[1]);

  NeedPlanner planner;
  for (const auto& [e, owner] : p.layout.tiles)
    planner.addNeed(labels, Rect{e.rowStart, e.rowEnd(), 0, 1}, owner.rank, true);
  sendPlannedPieces(w, table, planner.needs(), op.execId);

  std::size_t needIdx = 0;
  for (const auto& [e, owner] : p.layout.tiles) {
    const RegionNeed& need = planner.needs()[needIdx++];
    if (owner.rank != w.rank()) continue;
    const Slab<double> lab = assembleNeed<double>(w, table, need, op.execId);
    Tile& t = w.store().tileContaining(p.matrixId, Rect::ofExtent(e));
    for (std::uint64_t i = e.rowStart; i < e.rowEnd(); ++i) {
      const auto cls = static_cast<std::uint64_t>(std::llround(lab.at(i, 0)));
      if (cls < e.colStart || cls >= e.colEnd()) continue;
      const std::uint64_t idx = (i - e.rowStart) * e.colCount + (cls - e.colStart);
      const T cur = loadScalar<T>(t.buf.data(), p.precision, idx);
      storeScalar<T>(t.buf.data(), p.precision, idx, cur - T(1));
    }
  }
}

void execSubtractOneHot(WorkerRuntime& w, const OpDescriptor& op) {
  WorkerAccess::applyMeta(w, op);
  if (w.descriptor(op.ids[0]).precision == Precision::Double)
    runSubtractOneHot<double>(w, op);
  else
    runSubtractOneHot<float>(w, op);
}

// Row leaders compute per-row negative log likelihood terms in double and
// stream them to the master, which folds them in ascending row order.
void execLogLossGather(WorkerRuntime& w, const OpDescriptor& op) {
  const DescriptorTable& table = w.descriptors();
  const MatrixDescriptor& p = table.at(op.ids[0]);
  const LossPlan plan = planLogLoss(table, op);
  sendPlannedPieces(w, table, plan.needs, op.execId);

  for (std::size_t li = 0; li < plan.leaders.size(); ++li) {
    const TileExtent& le = plan.leaders[li];
    const RegionNeed& bandNeed = plan.needs[2 * li];
    const RegionNeed& labNeed = plan.needs[2 * li + 1];
    const std::uint32_t myPiece = plan.firstOutPiece + static_cast<std::uint32_t>(li);
    if (plan.leaderOwners[li] != w.rank()) continue;
    const Slab<double> band = assembleNeed<double>(w, table, bandNeed, op.execId);
    const Slab<double> lab = assembleNeed<double>(w, table, labNeed, op.execId);
    WireWriter wr;
    wr.u64(le.rowStart);
    wr.u32(static_cast<std::uint32_t>(le.rowCount));
    for (std::uint64_t i = le.rowStart; i < le.rowEnd(); ++i) {
      const auto cls = static_cast<std::uint64_t>(std::llround(lab.at(i, 0)));
      if (cls >= p.cols) throw Error("logLoss: label out of range");
      wr.f64(-std::log(band.at(i, cls)));
    }
    w.sendOpPiece(kMasterRank, op.execId, myPiece, wr.take());
  }
}

void execIm2col(WorkerRuntime& w, const OpDescriptor& op) {
  WorkerAccess::applyMeta(w, op);
  const DescriptorTable& table = w.descriptors();
  const MatrixDescriptor& in = table.at(op.ids[0]);
  const MatrixDescriptor& patches = table.at(op.ids[1]);
  const ConvGeometry g = ConvGeometry::decode(op.blob);
  const std::uint64_t outHW = static_cast<std::uint64_t>(g.outH()) * g.outW();

  NeedPlanner planner;
  for (const auto& [e, owner] : patches.layout.tiles) {
    const std::uint64_t n0 = e.rowStart / outHW;
    const std::uint64_t n1 = (e.rowEnd() - 1) / outHW + 1;
    planner.addNeed(in, Rect{n0, n1, 0, in.cols}, owner.rank, true);
  }
  sendPlannedPieces(w, table, planner.needs(), op.execId);

  std::size_t needIdx = 0;
  for (const auto& [e, owner] : patches.layout.tiles) {
    const RegionNeed& need = planner.needs()[needIdx++];
    if (owner.rank != w.rank()) continue;
    const Slab<double> inSlab = assembleNeed<double>(w, table, need, op.execId);
    Tile& t = w.store().tileContaining(patches.matrixId, Rect::ofExtent(e));
    std::uint64_t idx = 0;
    for (std::uint64_t pr = e.rowStart; pr < e.rowEnd(); ++pr) {
      const std::uint64_t n = pr / outHW;
      const std::uint64_t rem = pr % outHW;
      const std::uint64_t oy = rem / g.outW();
      const std::uint64_t ox = rem % g.outW();
      for (std::uint64_t pc = e.colStart; pc < e.colEnd(); ++pc, ++idx) {
        const std::uint64_t ch = pc / (static_cast<std::uint64_t>(g.kh) * g.kw);
        const std::uint64_t rr = (pc / g.kw) % g.kh;
        const std::uint64_t ss = pc % g.kw;
        const std::int64_t iy = static_cast<std::int64_t>(oy * g.stride + rr) - g.pad;
        const std::int64_t ix = static_cast<std::int64_t>(ox * g.stride + ss) - g.pad;
        double v = 0.0;
        if (iy >= 0 && iy < static_cast<std::int64_t>(g.height) && ix >= 0 &&
            ix < static_cast<std::int64_t>(g.width)) {
          const std::uint64_t col = ch * g.height * g.width + iy * g.width + ix;
          v = inSlab.at(n, col);
        }
        storeScalar<double>(t.buf.data(), patches.precision, idx, v);
      }
    }
    w.fabric().addCompute(w.rank(), e.elements());
  }
}

void execConvRepack(WorkerRuntime& w, const OpDescriptor& op) {
  WorkerAccess::applyMeta(w, op);
  const DescriptorTable& table = w.descriptors();
  const MatrixDescriptor& src = table.at(op.ids[0]);  // (N*HW) x K
  const MatrixDescriptor& dst = table.at(op.ids[1]);  // N x (K*HW)
  const std::uint64_t hw = op.ids[3];

  NeedPlanner planner;
  for (const auto& [e, owner] : dst.layout.tiles) {
    const std::uint64_t k0 = e.colStart / hw;
    const std::uint64_t k1 = (e.colEnd() - 1) / hw + 1;
    for (std::uint64_t n = e.rowStart; n < e.rowEnd(); ++n)
      planner.addNeed(src, Rect{n * hw, (n + 1) * hw, k0, k1}, owner.rank, true);
  }
  sendPlannedPieces(w, table, planner.needs(), op.execId);

  std::size_t needIdx = 0;
  for (const auto& [e, owner] : dst.layout.tiles) {
    for (std::uint64_t n = e.rowStart; n < e.rowEnd(); ++n) {
      const RegionNeed& need = planner.needs()[needIdx++];
      if (owner.rank != w.rank()) continue;
      const Slab<double> s = assembleNeed<double>(w, table, need, op.execId);
      Tile& t = w.store().tileContaining(dst.matrixId, Rect::ofExtent(e));
      for (std::uint64_t c = e.colStart; c < e.colEnd(); ++c) {
        const std::uint64_t k = c / hw;
        const std::uint64_t q = c % hw;
        const std::uint64_t idx = (n - e.rowStart) * e.colCount + (c - e.colStart);
        storeScalar<double>(t.buf.data(), dst.precision, idx, s.at(n * hw + q, k));
      }
    }
  }
}

void execReshape(WorkerRuntime& w, const OpDescriptor& op) {
  DescriptorTable& table = w.descriptors();
  const MatrixDescriptor oldD = table.at(op.ids[0]);  // copy: the table entry changes below
  WireReader r(op.blob);
  const MatrixDescriptor newD = decodeDescriptor(r);
  const std::size_t oldEb = bytesOf(oldD.precision);
  const std::size_t newEb = bytesOf(newD.precision);

  NeedPlanner planner;
  for (const auto& [e, owner] : newD.layout.tiles)
    planner.addNeed(oldD, Rect::ofExtent(e), owner.rank, true);
  sendPlannedPieces(w, table, planner.needs(), op.execId);

  // Assemble my new tiles in old-precision storage bytes, then convert.
  std::vector<Tile> mine;
  std::size_t needIdx = 0;
  for (const auto& [e, owner] : newD.layout.tiles) {
    const RegionNeed& need = planner.needs()[needIdx++];
    if (owner.rank != w.rank()) continue;
    std::vector<std::uint8_t> staging(e.elements() * oldEb);
    if (need.viaReplica) {
      w.waitReplicaValid(oldD.matrixId);
      const std::uint8_t* full = w.replicaBytes(oldD.matrixId);
      for (std::uint64_t rr = e.rowStart; rr < e.rowEnd(); ++rr)
        std::memcpy(staging.data() + (rr - e.rowStart) * e.colCount * oldEb,
                    full + (rr * oldD.cols + e.colStart) * oldEb, e.colCount * oldEb);
    } else {
      for (const PieceRoute& piece : need.pieces) {
        const auto bytes = piece.src == w.rank()
                               ? packFromStore(w, oldD, piece.rect)
                               : w.takePiece(op.execId, piece.pieceId);
        unpackRect(staging.data(), TileExtent{e.rowStart, e.rowCount, e.colStart, e.colCount},
                   piece.rect, oldEb, bytes.data());
      }
    }
    Tile t;
    t.extent = e;
    t.buf = w.pool().alloc(e.elements() * newEb);
    convertBuffer(staging.data(), oldD.precision, t.buf.data(), newD.precision, e.elements());
    mine.push_back(std::move(t));
  }

  WorkerAccess::applyMeta(w, op);  // swaps the descriptor, fails stale replication
  w.store().install(op.ids[0], std::move(mine));
}

void execReplicateStart(WorkerRuntime& w, const OpDescriptor& op) {
  WorkerAccess::applyMeta(w, op);
  w.fabric().trace().record(w.rank(), EventKind::ReplInitiate, op.ids[0],
                            w.descriptor(op.ids[0]).version);
  WorkerAccess::startReplication(w, op.ids[0], op.ids[1]);
}

}  // namespace

void execute(WorkerRuntime& w, const OpDescriptor& op) {
  w.fabric().trace().record(w.rank(), EventKind::OpStart, op.execId,
                            static_cast<std::uint64_t>(op.opcode));
  switch (op.opcode) {
    case OpCode::CreateMatrix: execCreate(w, op); break;
    case OpCode::DestroyMatrix: execDestroy(w, op); break;
    case OpCode::SetData: execSetData(w, op); break;
    case OpCode::GetData: execGetData(w, op); break;
    case OpCode::SetConst: execSetConst(w, op); break;
    case OpCode::Gemm: execGemm(w, op); break;
    case OpCode::AddRowColSum: execRowColSum(w, op); break;
    case OpCode::EwUnary:
    case OpCode::EwBinary: execElementwise(w, op); break;
    case OpCode::SoftmaxRows: execSoftmax(w, op); break;
    case OpCode::SubtractOneHot: execSubtractOneHot(w, op); break;
    case OpCode::LogLossGather: execLogLossGather(w, op); break;
    case OpCode::Im2col: execIm2col(w, op); break;
    case OpCode::ConvRepack: execConvRepack(w, op); break;
    case OpCode::Reshape: execReshape(w, op); break;
    case OpCode::ReplicateStart: execReplicateStart(w, op); break;
    case OpCode::DistributeSeeds:
      WorkerAccess::setSeed(w, deriveSeed(op.ids[0], w.rank()));
      break;
    case OpCode::QueryStats:
    case OpCode::MetaChecksum:
    case OpCode::Snapshot:
      break;  // answered by the dispatch loop
    case OpCode::Replay:
    case OpCode::Shutdown:
      throw Error("op handled by the runtime loop");
  }
  w.fabric().trace().record(w.rank(), EventKind::OpEnd, op.execId,
                            static_cast<std::uint64_t>(op.opcode));
}

}  // namespace kernels
}  // namespace gridmath
