// SPDX-License-Identifier: Apache-2.0
#include "gridmath/worker.hpp"

#include <cstring>

#include "gridmath/kernels.hpp"

namespace gridmath {

void TileStore::install(std::uint64_t matrixId, std::vector<Tile> tiles) {
  remove(matrixId);
  for (const auto& t : tiles) residentBytes_ += t.buf.size();
  tiles_[matrixId] = std::move(tiles);
}

void TileStore::remove(std::uint64_t matrixId) {
  auto it = tiles_.find(matrixId);
  if (it == tiles_.end()) return;
  for (const auto& t : it->second) residentBytes_ -= t.buf.size();
  tiles_.erase(it);
}

std::vector<Tile>& TileStore::tilesOf(std::uint64_t matrixId) {
  auto it = tiles_.find(matrixId);
  if (it == tiles_.end()) throw Error("tile store: unknown matrix " + std::to_string(matrixId));
  return it->second;
}

const std::vector<Tile>* TileStore::find(std::uint64_t matrixId) const {
  auto it = tiles_.find(matrixId);
  return it == tiles_.end() ? nullptr : &it->second;
}

Tile& TileStore::tileContaining(std::uint64_t matrixId, const Rect& rect) {
  for (auto& t : tilesOf(matrixId)) {
    const Rect tr = Rect::ofExtent(t.extent);
    if (rect.r0 >= tr.r0 && rect.r1 <= tr.r1 && rect.c0 >= tr.c0 && rect.c1 <= tr.c1) return t;
  }
  throw Error("tile store: no tile covers requested rect");
}

WorkerRuntime::WorkerRuntime(Fabric& fabric, std::uint32_t rank)
    : fabric_(fabric), ep_(fabric.worker(rank)), rank_(rank) {}

const MatrixDescriptor& WorkerRuntime::descriptor(std::uint64_t id) const {
  auto it = descs_.find(id);
  if (it == descs_.end()) throw Error("unknown matrix id " + std::to_string(id));
  return it->second;
}

void WorkerRuntime::run() {
  for (;;) {
    if (!controlQueue_.empty()) {
      OpDescriptor op = std::move(controlQueue_.front());
      controlQueue_.pop_front();
      if (op.opcode == OpCode::Shutdown) return;
      dispatch(op);
      continue;
    }
    try {
      if (!pumpOnce(true)) continue;
    } catch (const Error&) {
      return;  // fabric closed
    }
  }
}

bool WorkerRuntime::pumpOnce(bool mayBlock) {
  std::optional<Message> m;
  if (mayBlock && sendJobs_.empty()) {
    m = ep_.recvWhere([](const Message&) { return true; },
                      [this] { return progressSendsOnce(); });
  } else {
    m = ep_.tryRecv();
  }
  if (m) {
    switch (m->kind) {
      case MsgKind::Control:
        controlQueue_.push_back(OpDescriptor::decode(m->payload));
        break;
      case MsgKind::Data:
        handleData(*m);
        break;
      case MsgKind::Completion:
        break;  // workers do not consume completions
    }
    return true;
  }
  return progressSendsOnce();
}

void WorkerRuntime::handleData(const Message& m) {
  if (m.tag == kReplChunkTag) {
    applyChunk(m.payload);
    return;
  }
  std::size_t off = 0;
  const PieceHeader h = decodePieceHeader(m.payload, off);
  std::vector<std::uint8_t> bytes(m.payload.begin() + static_cast<std::ptrdiff_t>(off),
                                  m.payload.end());
  pendingPieces_[h.execId][h.pieceId] = std::move(bytes);
}

void WorkerRuntime::sendOpPiece(std::uint32_t dest, std::uint64_t execId, std::uint32_t pieceId,
                                std::vector<std::uint8_t> bytes) {
  Message m;
  m.kind = MsgKind::Data;
  m.source = rank_;
  m.dest = dest;
  m.tag = static_cast<std::uint32_t>(execId & 0x7FFFFFFFu);
  m.payload = encodePiece({execId, pieceId}, bytes.data(), bytes.size());
  fabric_.send(std::move(m));
}

bool WorkerRuntime::pieceReady(std::uint64_t execId, std::uint32_t pieceId) const {
  auto it = pendingPieces_.find(execId);
  if (it == pendingPieces_.end()) return false;
  return it->second.count(pieceId) != 0;
}

std::vector<std::uint8_t> WorkerRuntime::takePiece(std::uint64_t execId, std::uint32_t pieceId) {
  for (;;) {
    auto it = pendingPieces_.find(execId);
    if (it != pendingPieces_.end()) {
      auto pit = it->second.find(pieceId);
      if (pit != it->second.end()) {
        std::vector<std::uint8_t> bytes = std::move(pit->second);
        it->second.erase(pit);
        if (it->second.empty()) pendingPieces_.erase(it);
        return bytes;
      }
    }
    pumpOnce(true);
  }
}

void WorkerRuntime::sendCompletion(const Completion& c) {
  Message m;
  m.kind = MsgKind::Completion;
  m.source = rank_;
  m.dest = kMasterRank;
  m.tag = static_cast<std::uint32_t>(c.execId & 0x7FFFFFFFu);
  m.payload = c.encode();
  fabric_.send(std::move(m));
}

void WorkerRuntime::dispatch(const OpDescriptor& op) {
  if (op.recordPipeline != 0) pipelines_[op.recordPipeline].push_back(op);
  Completion ack;
  ack.execId = op.execId;
  try {
    if (op.opcode == OpCode::Replay) {
      auto it = pipelines_.find(op.ids[0]);
      if (it == pipelines_.end())
        throw Error("unknown pipeline id " + std::to_string(op.ids[0]));
      std::uint64_t exec = op.execId;
      for (const OpDescriptor& recorded : it->second) {
        OpDescriptor step = recorded;
        step.execId = ++exec;
        step.recordPipeline = 0;
        executeOp(step);
      }
    } else {
      executeOp(op);
      if (op.opcode == OpCode::QueryStats) {
        const PoolStats ps = pool_.stats();
        WireWriter w;
        w.u64(ps.allocationsFromOS);
        w.u64(ps.reuses);
        w.u64(ps.frees);
        w.u64(ps.heldBytes);
        w.u64(store_.residentBytes());
        ack.blob = w.take();
      } else if (op.opcode == OpCode::MetaChecksum) {
        ack.aux0 = tableHash(descs_);
      } else if (op.opcode == OpCode::Snapshot) {
        WireWriter w;
        w.u32(static_cast<std::uint32_t>(store_.all().size()));
        for (const auto& [id, tiles] : store_.all()) {
          w.u64(id);
          w.u32(static_cast<std::uint32_t>(tiles.size()));
          for (const auto& t : tiles) {
            w.u64(t.extent.rowStart);
            w.u64(t.extent.rowCount);
            w.u64(t.extent.colStart);
            w.u64(t.extent.colCount);
            w.u64(fnv1a(t.buf.data(), t.buf.size()));
          }
        }
        w.u32(static_cast<std::uint32_t>(replicas_.size()));
        for (const auto& [id, e] : replicas_) {
          w.u64(id);
          w.u64(e.version);
          w.u8(static_cast<std::uint8_t>(e.state));
        }
        ack.blob = w.take();
      }
    }
  } catch (const std::exception& e) {
    ack.status = 1;
    const char* what = e.what();
    ack.blob.assign(what, what + std::strlen(what));
  }
  sendCompletion(ack);
}

void WorkerRuntime::applyMetadataAndInvalidate(const OpDescriptor& op) {
  // Snapshot versions that are about to move so in-flight replicas can fail.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> moved;
  for (std::uint64_t id : mutatedMatrices(op)) {
    auto it = descs_.find(id);
    if (it != descs_.end()) moved.push_back({id, it->second.version});
  }
  if (op.opcode == OpCode::DestroyMatrix) {
    auto it = descs_.find(op.ids[0]);
    if (it != descs_.end()) moved.push_back({op.ids[0], it->second.version});
  }
  applyOpMetadata(op, descs_);
  for (const auto& [id, oldVersion] : moved) failPendingReplica(id, oldVersion);
}

void WorkerRuntime::failPendingReplica(std::uint64_t matrixId, std::uint64_t version) {
  // Cancel queued outbound chunks for the dead version.
  for (auto& job : sendJobs_)
    if (job.matrixId == matrixId && job.version == version) job.chunks.clear();
  auto it = replicas_.find(matrixId);
  if (it != replicas_.end() && it->second.version == version &&
      it->second.state == ReplicaState::Pending) {
    it->second.state = ReplicaState::Stale;
    if (reportedFailures_.insert({matrixId, version}).second) {
      fabric_.trace().record(rank_, EventKind::ReplFailed, matrixId, version);
      Completion c;
      c.kind = CompletionKind::ReplicaFailed;
      c.aux0 = matrixId;
      c.aux1 = version;
      sendCompletion(c);
    }
  }
}

void WorkerRuntime::executeOp(const OpDescriptor& op) {
  kernels::execute(*this, op);
}

// --- replica cache ----------------------------------------------------------

void WorkerRuntime::storeReplica(std::uint64_t matrixId, const std::uint8_t* data, std::size_t n,
                                 std::uint64_t version) {
  auto it = replicas_.find(matrixId);
  if (it != replicas_.end() && version < it->second.version)
    throw Error("storeReplica: version regression");
  ReplicaEntry& e = replicas_[matrixId];
  if (e.full.size() != n) {
    e.full = pool_.alloc(n);
  }
  std::memcpy(e.full.data(), data, n);
  e.version = version;
  e.state = ReplicaState::Valid;
  e.bytesGot = e.bytesExpected = n;
}

ReplicaReadStatus WorkerRuntime::readReplica(std::uint64_t matrixId, const std::uint8_t** data,
                                             std::size_t* n) const {
  auto it = replicas_.find(matrixId);
  if (it == replicas_.end()) return ReplicaReadStatus::Missing;
  const ReplicaEntry& e = it->second;
  if (e.state == ReplicaState::Pending) return ReplicaReadStatus::Pending;
  auto dit = descs_.find(matrixId);
  if (e.state == ReplicaState::Stale || (dit != descs_.end() && e.version != dit->second.version))
    return ReplicaReadStatus::Stale;
  if (data) *data = e.full.data();
  if (n) *n = e.full.size();
  return ReplicaReadStatus::Ok;
}

void WorkerRuntime::waitReplicaValid(std::uint64_t matrixId) {
  for (;;) {
    const ReplicaReadStatus st = readReplica(matrixId, nullptr, nullptr);
    if (st == ReplicaReadStatus::Ok) return;
    if (st == ReplicaReadStatus::Stale)
      throw Error("replica of matrix " + std::to_string(matrixId) + " went stale mid-wait");
    if (st == ReplicaReadStatus::Missing)
      throw Error("no replica of matrix " + std::to_string(matrixId) + " on worker " +
                  std::to_string(rank_));
    pumpOnce(true);
  }
}

const std::uint8_t* WorkerRuntime::replicaBytes(std::uint64_t matrixId) const {
  const std::uint8_t* p = nullptr;
  std::size_t n = 0;
  const ReplicaReadStatus st = readReplica(matrixId, &p, &n);
  if (st != ReplicaReadStatus::Ok)
    throw Error("replica of matrix " + std::to_string(matrixId) + " not readable");
  return p;
}

ReplicaEntry& WorkerRuntime::ensurePendingEntry(std::uint64_t matrixId, std::uint64_t version) {
  const MatrixDescriptor& d = descriptor(matrixId);
  ReplicaEntry& e = replicas_[matrixId];
  const std::uint64_t bytes = d.byteCount();
  if (e.state != ReplicaState::Pending || e.version != version || e.bytesExpected != bytes) {
    if (e.full.size() != bytes) e.full = pool_.alloc(bytes);
    e.version = version;
    e.state = ReplicaState::Pending;
    e.bytesGot = 0;
    e.bytesExpected = bytes;
  }
  return e;
}

void WorkerRuntime::markReplicaComplete(std::uint64_t matrixId, ReplicaEntry& e) {
  e.state = ReplicaState::Valid;
  fabric_.trace().record(rank_, EventKind::ReplicaValid, matrixId, e.version);
  Completion c;
  c.kind = CompletionKind::ReplicaDone;
  c.aux0 = matrixId;
  c.aux1 = e.version;
  sendCompletion(c);
}

void WorkerRuntime::startReplication(std::uint64_t matrixId, std::uint64_t chunkSize) {
  const MatrixDescriptor& d = descriptor(matrixId);
  const std::uint64_t version = d.version;
  if (chunkSize == 0) chunkSize = 1ull << 20;

  // Already replicated at this version: report done again and skip the push.
  if (auto it = replicas_.find(matrixId);
      it != replicas_.end() && it->second.state == ReplicaState::Valid &&
      it->second.version == version) {
    Completion c;
    c.kind = CompletionKind::ReplicaDone;
    c.aux0 = matrixId;
    c.aux1 = version;
    sendCompletion(c);
    return;
  }

  ReplicaEntry& e = ensurePendingEntry(matrixId, version);

  // Self-copy of owned tiles; remote bytes trickle in as peers push.
  const std::size_t eb = bytesOf(d.precision);
  if (const auto* tiles = store_.find(matrixId)) {
    for (const auto& t : *tiles) {
      const auto runs = tileByteRuns(d, t.extent);
      std::uint64_t srcOff = 0;
      for (const auto& run : runs) {
        std::memcpy(e.full.data() + run.offset, t.buf.data() + srcOff, run.length);
        srcOff += run.length;
      }
      e.bytesGot += t.extent.elements() * eb;
    }
  }

  // Queue outbound chunks for every peer.
  if (workerCount() > 1 && store_.find(matrixId)) {
    ReplSendJob job;
    job.matrixId = matrixId;
    job.version = version;
    for (const auto& t : store_.tilesOf(matrixId)) {
      for (const auto& run : tileByteRuns(d, t.extent)) {
        std::uint64_t off = run.offset;
        std::uint64_t left = run.length;
        while (left > 0) {
          const std::uint32_t len = static_cast<std::uint32_t>(std::min<std::uint64_t>(left, chunkSize));
          for (std::uint32_t dest = 0; dest < workerCount(); ++dest)
            if (dest != rank_) job.chunks.push_back({dest, off, len});
          off += len;
          left -= len;
        }
      }
    }
    if (!job.chunks.empty()) sendJobs_.push_back(std::move(job));
  }

  // Replay any chunks that raced ahead of this op.
  auto pending = std::move(futureChunks_);
  futureChunks_.clear();
  for (auto& payload : pending) applyChunk(payload);

  if (e.state == ReplicaState::Pending && e.bytesGot == e.bytesExpected)
    markReplicaComplete(matrixId, e);
}

bool WorkerRuntime::progressSendsOnce() {
  while (!sendJobs_.empty() && sendJobs_.front().chunks.empty()) sendJobs_.pop_front();
  if (sendJobs_.empty()) return false;
  ReplSendJob& job = sendJobs_.front();
  const auto pc = job.chunks.front();
  job.chunks.pop_front();

  const MatrixDescriptor& d = descriptor(job.matrixId);
  // Re-pack the bytes from the owning tile on demand.
  const std::size_t eb = bytesOf(d.precision);
  const std::uint64_t elemOff = pc.offset / eb;
  const std::uint64_t row = elemOff / d.cols;
  const std::uint64_t col = elemOff % d.cols;
  Tile& t = store_.tileContaining(job.matrixId, Rect{row, row + 1, col, col + 1});
  const std::uint64_t tileOff =
      ((row - t.extent.rowStart) * t.extent.colCount + (col - t.extent.colStart)) * eb;

  ChunkHeader h{job.matrixId, job.version, pc.offset, pc.length};
  Message m;
  m.kind = MsgKind::Data;
  m.source = rank_;
  m.dest = pc.dest;
  m.tag = kReplChunkTag;
  m.payload = encodeChunk(h, t.buf.data() + tileOff);
  fabric_.send(std::move(m));
  fabric_.trace().record(rank_, EventKind::ReplChunkSent, job.matrixId, pc.length);
  return true;
}

void WorkerRuntime::applyChunk(const std::vector<std::uint8_t>& payload) {
  std::size_t off = 0;
  const ChunkHeader h = decodeChunkHeader(payload, off);
  applyChunkBytes(h, payload.data() + off);
}

void WorkerRuntime::applyChunkBytes(const ChunkHeader& h, const std::uint8_t* data) {
  auto dit = descs_.find(h.matrixId);
  if (dit == descs_.end()) return;  // destroyed; drop
  const MatrixDescriptor& d = dit->second;
  if (h.version > d.version) {
    // Peer is ahead of our metadata; keep until we catch up.
    WireWriter w;
    w.u64(h.matrixId);
    w.u64(h.version);
    w.u64(h.offset);
    w.u32(h.length);
    w.bytes(data, h.length);
    futureChunks_.push_back(w.take());
    return;
  }
  if (h.version < d.version) {
    failPendingReplica(h.matrixId, h.version);
    return;
  }
  if (auto it = replicas_.find(h.matrixId);
      it != replicas_.end() && it->second.state == ReplicaState::Valid &&
      it->second.version == h.version)
    return;  // duplicate
  ReplicaEntry& e = ensurePendingEntry(h.matrixId, h.version);
  if (e.state != ReplicaState::Pending) return;
  std::memcpy(e.full.data() + h.offset, data, h.length);
  e.bytesGot += h.length;
  if (e.bytesGot == e.bytesExpected) markReplicaComplete(h.matrixId, e);
}

}  // namespace gridmath
