// SPDX-License-Identifier: Apache-2.0
#include "gridmath/session.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>

namespace gridmath {

namespace {
constexpr char kCheckpointMagic[4] = {'D', 'M', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

bool recordable(OpCode c) {
  switch (c) {
    case OpCode::SetConst:
    case OpCode::Gemm:
    case OpCode::AddRowColSum:
    case OpCode::EwUnary:
    case OpCode::EwBinary:
    case OpCode::SoftmaxRows:
    case OpCode::SubtractOneHot:
    case OpCode::ReplicateStart:
      return true;
    default:
      return false;
  }
}
}  // namespace

std::uint64_t DistMatrix::rows() const { return session_->descriptor(id_).rows; }
std::uint64_t DistMatrix::cols() const { return session_->descriptor(id_).cols; }
Precision DistMatrix::precision() const { return session_->descriptor(id_).precision; }

Session::Session(SessionOptions opts) : opts_(opts) {
  if (opts_.workers == 0) throw Error("session: need at least one worker");
  fabric_ = opts_.simulated ? Fabric::simulated(opts_.workers, opts_.cost)
                            : Fabric::inProcess(opts_.workers);
  fabric_->setControlValidator(
      [](const std::vector<std::uint8_t>& payload) { return OpDescriptor::canDecode(payload); });
  for (std::uint32_t r = 0; r < opts_.workers; ++r)
    workers_.push_back(std::make_unique<WorkerRuntime>(*fabric_, r));
  for (std::uint32_t r = 0; r < opts_.workers; ++r)
    threads_.emplace_back([w = workers_[r].get()] {
      try {
        w->run();
      } catch (...) {
      }
    });
  distributeSeeds(opts_.rootSeed);
}

Session::~Session() {
  try {
    if (!shutdownSent_) {
      OpDescriptor op;
      op.opcode = OpCode::Shutdown;
      op.execId = nextExec_++;
      fabric_->broadcastControl(op.encode());
      awaitAcks(op.execId);
      shutdownSent_ = true;
    }
  } catch (...) {
  }
  fabric_->closeAll();
  for (auto& t : threads_)
    if (t.joinable()) t.join();
}

const MatrixDescriptor& Session::descriptor(std::uint64_t id) const {
  auto it = table_.find(id);
  if (it == table_.end()) throw Error("unknown matrix id " + std::to_string(id));
  return it->second;
}

std::uint64_t Session::issueOp(OpDescriptor op, std::uint64_t extraExecIds) {
  op.execId = nextExec_;
  nextExec_ += 1 + extraExecIds;
  if (recording_ != 0) {
    if (!recordable(op.opcode))
      throw Error("op not recordable inside an open pipeline recording");
    op.recordPipeline = recording_;
  }
  kernels::validate(table_, op, opts_.workers);

  if (op.opcode == OpCode::Replay) {
    // Mirror the metadata walk the workers will perform, arming replication
    // bookkeeping for every replicated parameter.
    for (const OpDescriptor& step : pipelines_.at(op.ids[0])) {
      applyOpMetadata(step, table_);
      if (step.opcode == OpCode::ReplicateStart) {
        const std::uint64_t v = table_.at(step.ids[0]).version;
        replJobs_.insert({{step.ids[0], v}, ReplJob{}});
      }
    }
  } else {
    applyOpMetadata(op, table_);
  }

  if (op.recordPipeline != 0) pipelines_[recording_].push_back(op);
  fabric_->broadcastControl(op.encode(), static_cast<std::uint32_t>(op.execId & 0x7FFFFFFFu));
  return op.execId;
}

Message Session::pumpMaster() { return fabric_->master().recv(); }

void Session::absorb(std::uint32_t source, const Completion& c) {
  switch (c.kind) {
    case CompletionKind::ReplicaDone:
      replJobs_[{c.aux0, c.aux1}].done.insert(source);
      break;
    case CompletionKind::ReplicaFailed:
      replJobs_[{c.aux0, c.aux1}].failed = true;
      break;
    case CompletionKind::OpAck:
      throw Error("unexpected op ack (exec " + std::to_string(c.execId) + ")");
  }
}

std::vector<std::pair<std::uint32_t, Completion>> Session::awaitAcks(std::uint64_t execId) {
  std::vector<std::pair<std::uint32_t, Completion>> acks;
  if (auto it = ackStash_.find(execId); it != ackStash_.end()) {
    acks = std::move(it->second);
    ackStash_.erase(it);
  }
  while (acks.size() < opts_.workers) {
    const Message m = pumpMaster();
    if (m.kind == MsgKind::Data) {
      std::size_t off = 0;
      const PieceHeader h = decodePieceHeader(m.payload, off);
      masterPieces_[h.execId][h.pieceId].assign(m.payload.begin() + static_cast<std::ptrdiff_t>(off),
                                                m.payload.end());
      continue;
    }
    const Completion c = Completion::decode(m.payload);
    if (c.kind == CompletionKind::OpAck) {
      if (c.execId == execId)
        acks.emplace_back(m.source, c);
      else
        ackStash_[c.execId].emplace_back(m.source, c);
    } else {
      absorb(m.source, c);
    }
  }
  std::sort(acks.begin(), acks.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string errors;
  for (const auto& [rank, c] : acks)
    if (c.status != 0)
      errors += "worker " + std::to_string(rank) + ": " +
                std::string(c.blob.begin(), c.blob.end()) + "; ";
  if (!errors.empty()) throw Error("op failed: " + errors);
  if (opts_.checkMetadataEveryOp && !inConsistencyCheck_) verifyMetadataConsistency();
  return acks;
}

std::vector<std::uint8_t> Session::takeMasterPiece(std::uint64_t execId, std::uint32_t pieceId) {
  for (;;) {
    auto it = masterPieces_.find(execId);
    if (it != masterPieces_.end()) {
      auto pit = it->second.find(pieceId);
      if (pit != it->second.end()) {
        std::vector<std::uint8_t> bytes = std::move(pit->second);
        it->second.erase(pit);
        if (it->second.empty()) masterPieces_.erase(it);
        return bytes;
      }
    }
    const Message m = pumpMaster();
    if (m.kind == MsgKind::Data) {
      std::size_t off = 0;
      const PieceHeader h = decodePieceHeader(m.payload, off);
      masterPieces_[h.execId][h.pieceId].assign(m.payload.begin() + static_cast<std::ptrdiff_t>(off),
                                                m.payload.end());
    } else {
      const Completion c = Completion::decode(m.payload);
      if (c.kind == CompletionKind::OpAck)
        ackStash_[c.execId].emplace_back(m.source, c);
      else
        absorb(m.source, c);
    }
  }
}

void Session::sendMasterPiece(std::uint32_t dest, std::uint64_t execId, std::uint32_t pieceId,
                              std::vector<std::uint8_t> bytes) {
  Message m;
  m.kind = MsgKind::Data;
  m.source = kMasterRank;
  m.dest = dest;
  m.tag = static_cast<std::uint32_t>(execId & 0x7FFFFFFFu);
  m.payload = encodePiece({execId, pieceId}, bytes.data(), bytes.size());
  fabric_->send(std::move(m));
}

// --- matrix lifecycle ---------------------------------------------------------

DistMatrix Session::createWithDescriptor(MatrixDescriptor d) {
  OpDescriptor op;
  op.opcode = OpCode::CreateMatrix;
  op.ids[0] = d.matrixId;
  WireWriter w;
  encodeDescriptor(d, w);
  op.blob = w.take();
  const std::uint64_t execId = issueOp(std::move(op));
  try {
    awaitAcks(execId);
  } catch (...) {
    OpDescriptor rollback;
    rollback.opcode = OpCode::DestroyMatrix;
    rollback.ids[0] = d.matrixId;
    awaitAcks(issueOp(std::move(rollback)));
    throw;
  }
  return DistMatrix(this, d.matrixId);
}

DistMatrix Session::createMatrix(std::uint64_t rows, std::uint64_t cols, Precision p,
                                 const Layout& layout) {
  MatrixDescriptor d;
  d.matrixId = nextMatrixId_++;
  d.rows = rows;
  d.cols = cols;
  d.precision = p;
  d.layout = layout;
  d.version = 0;
  return createWithDescriptor(std::move(d));
}

void Session::destroy(DistMatrix m) {
  OpDescriptor op;
  op.opcode = OpCode::DestroyMatrix;
  op.ids[0] = m.id();
  awaitAcks(issueOp(std::move(op)));
}

void Session::scatterFull(const MatrixDescriptor& d, const std::uint8_t* image,
                          std::uint64_t execId) {
  const std::size_t eb = bytesOf(d.precision);
  const TileExtent fullExtent{0, d.rows, 0, d.cols};
  for (const PieceRoute& piece : kernels::planScatter(d)) {
    std::vector<std::uint8_t> bytes(piece.rect.elements() * eb);
    packRect(image, fullExtent, piece.rect, eb, bytes.data());
    sendMasterPiece(piece.consumer, execId, piece.pieceId, std::move(bytes));
  }
}

void Session::gatherFull(const MatrixDescriptor& d, std::uint8_t* image, std::uint64_t execId) {
  const std::size_t eb = bytesOf(d.precision);
  const TileExtent fullExtent{0, d.rows, 0, d.cols};
  for (const PieceRoute& piece : kernels::planGather(d)) {
    const auto bytes = takeMasterPiece(execId, piece.pieceId);
    unpackRect(image, fullExtent, piece.rect, eb, bytes.data());
  }
}

void Session::setData(DistMatrix m, const std::vector<double>& rowMajor) {
  const MatrixDescriptor d = descriptor(m.id());
  if (rowMajor.size() != d.elementCount())
    throw Error("setData: expected " + std::to_string(d.elementCount()) + " values, got " +
                std::to_string(rowMajor.size()));
  PoolBuffer staging = masterPool_.alloc(d.byteCount());
  convertBuffer(reinterpret_cast<const std::uint8_t*>(rowMajor.data()), Precision::Double,
                staging.data(), d.precision, rowMajor.size());
  OpDescriptor op;
  op.opcode = OpCode::SetData;
  op.ids[0] = m.id();
  const std::uint64_t execId = issueOp(std::move(op));
  scatterFull(descriptor(m.id()), staging.data(), execId);
  awaitAcks(execId);
}

void Session::setDataF32(DistMatrix m, const std::vector<float>& rowMajor) {
  const MatrixDescriptor d = descriptor(m.id());
  if (rowMajor.size() != d.elementCount()) throw Error("setData: value count mismatch");
  PoolBuffer staging = masterPool_.alloc(d.byteCount());
  convertBuffer(reinterpret_cast<const std::uint8_t*>(rowMajor.data()), Precision::Single,
                staging.data(), d.precision, rowMajor.size());
  OpDescriptor op;
  op.opcode = OpCode::SetData;
  op.ids[0] = m.id();
  const std::uint64_t execId = issueOp(std::move(op));
  scatterFull(descriptor(m.id()), staging.data(), execId);
  awaitAcks(execId);
}

std::vector<std::uint8_t> Session::getDataRaw(DistMatrix m) {
  const MatrixDescriptor& d = descriptor(m.id());
  OpDescriptor op;
  op.opcode = OpCode::GetData;
  op.ids[0] = m.id();
  const std::uint64_t execId = issueOp(std::move(op));
  PoolBuffer staging = masterPool_.alloc(d.byteCount());
  gatherFull(d, staging.data(), execId);
  awaitAcks(execId);
  return std::vector<std::uint8_t>(staging.data(), staging.data() + d.byteCount());
}

std::vector<double> Session::getData(DistMatrix m) {
  const MatrixDescriptor& d = descriptor(m.id());
  const auto raw = getDataRaw(m);
  std::vector<double> out(d.elementCount());
  convertBuffer(raw.data(), d.precision, reinterpret_cast<std::uint8_t*>(out.data()),
                Precision::Double, out.size());
  return out;
}

void Session::reshape(DistMatrix m, const Layout& newLayout,
                      std::optional<Precision> newPrecision) {
  const MatrixDescriptor& old = descriptor(m.id());
  MatrixDescriptor d = old;
  d.layout = newLayout;
  d.precision = newPrecision.value_or(old.precision);
  d.version = old.version + 1;
  d.replicatedVersion = ~0ull;
  OpDescriptor op;
  op.opcode = OpCode::Reshape;
  op.ids[0] = m.id();
  WireWriter w;
  encodeDescriptor(d, w);
  op.blob = w.take();
  awaitAcks(issueOp(std::move(op)));
}

// --- replication ---------------------------------------------------------------

ReplicationHandle Session::replicateAsync(DistMatrix m) {
  const MatrixDescriptor& d = descriptor(m.id());
  const ReplicationHandle h{m.id(), d.version};
  if (replJobs_.count({h.matrixId, h.version})) return h;  // coalesce onto in-flight job
  replJobs_.insert({{h.matrixId, h.version}, ReplJob{}});
  OpDescriptor op;
  op.opcode = OpCode::ReplicateStart;
  op.ids[0] = m.id();
  op.ids[1] = opts_.replicationChunkBytes;
  awaitAcks(issueOp(std::move(op)));
  return h;
}

void Session::replicateSync(DistMatrix m) {
  const ReplicationHandle h = replicateAsync(m);
  if (wait(h) != ReplState::Done) throw Error("replication failed");
}

ReplState Session::jobState(const ReplicationHandle& h) const {
  auto it = replJobs_.find({h.matrixId, h.version});
  if (it == replJobs_.end()) return ReplState::Failed;
  if (it->second.failed) return ReplState::Failed;
  if (it->second.done.size() == opts_.workers) return ReplState::Done;
  return ReplState::InFlight;
}

ReplState Session::handleState(const ReplicationHandle& h) const { return jobState(h); }

ReplState Session::wait(const ReplicationHandle& h) {
  for (;;) {
    const ReplState st = jobState(h);
    if (st != ReplState::InFlight) return st;
    const Message m = pumpMaster();
    if (m.kind == MsgKind::Data) {
      std::size_t off = 0;
      const PieceHeader ph = decodePieceHeader(m.payload, off);
      masterPieces_[ph.execId][ph.pieceId].assign(
          m.payload.begin() + static_cast<std::ptrdiff_t>(off), m.payload.end());
      continue;
    }
    const Completion c = Completion::decode(m.payload);
    if (c.kind == CompletionKind::OpAck)
      ackStash_[c.execId].emplace_back(m.source, c);
    else
      absorb(m.source, c);
  }
}

void Session::distributeSeeds(std::uint64_t rootSeed) {
  rootSeed_ = rootSeed;
  OpDescriptor op;
  op.opcode = OpCode::DistributeSeeds;
  op.ids[0] = rootSeed;
  awaitAcks(issueOp(std::move(op)));
}

// --- pipeline recording ----------------------------------------------------------

std::uint64_t Session::beginRecord() {
  if (recording_ != 0) throw Error("beginRecord: a recording is already open");
  recording_ = nextPipelineId_++;
  pipelines_[recording_] = {};
  return recording_;
}

void Session::endRecord() {
  if (recording_ == 0) throw Error("endRecord: no open recording");
  closedPipelines_.insert(recording_);
  recording_ = 0;
}

void Session::replay(std::uint64_t pipelineId) {
  if (recording_ != 0) throw Error("replay: recording still open");
  if (!closedPipelines_.count(pipelineId))
    throw Error("replay: unknown or unfinished pipeline " + std::to_string(pipelineId));
  OpDescriptor op;
  op.opcode = OpCode::Replay;
  op.ids[0] = pipelineId;
  const auto steps = pipelines_.at(pipelineId).size();
  awaitAcks(issueOp(std::move(op), steps));
}

// --- checkpoint-restart -----------------------------------------------------------

void Session::checkpoint(const std::string& path) {
  for (const auto& [key, job] : replJobs_)
    if (!job.failed && job.done.size() < opts_.workers)
      throw Error("checkpoint: replication of matrix " + std::to_string(key.first) +
                  " still in flight");

  WireWriter body;  // everything after the magic
  body.u32(kCheckpointVersion);
  body.u64(rootSeed_);
  body.u32(static_cast<std::uint32_t>(table_.size()));
  for (const auto& [id, d] : table_) {
    encodeDescriptor(d, body);
    const auto raw = getDataRaw(DistMatrix(this, id));
    body.bytes(raw.data(), raw.size());
  }
  const auto& bytes = body.view();
  const auto crc = static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("checkpoint: cannot open " + path);
  out.write(kCheckpointMagic, 4);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  WireWriter tail;
  tail.u32(crc);
  out.write(reinterpret_cast<const char*>(tail.view().data()), 4);
  if (!out) throw Error("checkpoint: write failed");
}

std::unique_ptr<Session> Session::restore(const std::string& path, SessionOptions opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("restore: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 4 + 4 + 8 + 4 + 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw Error("restore: corrupt file (bad magic or truncated)");
  const std::size_t bodyLen = bytes.size() - 4 - 4;
  const auto crc = static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data() + 4), static_cast<uInt>(bodyLen)));
  WireReader tail(bytes.data() + 4 + bodyLen, 4);
  if (tail.u32() != crc) throw Error("restore: corrupt file (CRC mismatch)");

  WireReader r(bytes.data() + 4, bodyLen);
  if (r.u32() != kCheckpointVersion) throw Error("restore: unsupported format version");
  const std::uint64_t rootSeed = r.u64();
  const std::uint32_t count = r.u32();

  opts.rootSeed = rootSeed;
  auto session = std::make_unique<Session>(opts);
  for (std::uint32_t i = 0; i < count; ++i) {
    MatrixDescriptor d = decodeDescriptor(r);
    const std::uint64_t payloadBytes = d.byteCount();
    const std::uint8_t* payload = r.raw(payloadBytes);
    if (!validateLayout(d.rows, d.cols, d.layout, opts.workers).ok())
      d.layout = makeRowBlockLayout(d.rows, d.cols, makeWorkerGroup(opts.workers));
    session->nextMatrixId_ = std::max(session->nextMatrixId_, d.matrixId + 1);
    const DistMatrix m = session->createWithDescriptor(d);

    OpDescriptor op;
    op.opcode = OpCode::SetData;
    op.ids[0] = m.id();
    const std::uint64_t execId = session->issueOp(std::move(op));
    session->scatterFull(session->descriptor(m.id()), payload, execId);
    session->awaitAcks(execId);
  }
  if (!r.done()) throw Error("restore: trailing bytes");
  return session;
}

// --- introspection ------------------------------------------------------------------

void Session::verifyMetadataConsistency() {
  inConsistencyCheck_ = true;
  OpDescriptor op;
  op.opcode = OpCode::MetaChecksum;
  const auto acks = awaitAcks(issueOp(std::move(op)));
  inConsistencyCheck_ = false;
  const std::uint64_t expected = tableHash(table_);
  for (const auto& [rank, c] : acks)
    if (c.aux0 != expected)
      throw Error("metadata divergence on worker " + std::to_string(rank));
}

std::vector<WorkerStatsRow> Session::queryWorkerStats() {
  OpDescriptor op;
  op.opcode = OpCode::QueryStats;
  const auto acks = awaitAcks(issueOp(std::move(op)));
  std::vector<WorkerStatsRow> rows;
  for (const auto& [rank, c] : acks) {
    WireReader r(c.blob);
    WorkerStatsRow row;
    row.osAllocations = r.u64();
    row.reuses = r.u64();
    row.frees = r.u64();
    row.heldBytes = r.u64();
    row.residentBytes = r.u64();
    rows.push_back(row);
  }
  return rows;
}

WorkerStatsRow Session::masterPoolStats() const {
  const PoolStats s = masterPool_.stats();
  return {s.allocationsFromOS, s.reuses, s.frees, s.heldBytes, 0};
}

void Session::phaseMark(const std::string& label) {
  fabric_->trace().record(-1, EventKind::PhaseMark, 0, 0, label);
}

// --- kernel wrappers ------------------------------------------------------------------

namespace {
OpDescriptor makeOp(OpCode code) {
  OpDescriptor op;
  op.opcode = code;
  return op;
}
}  // namespace

void gemm(Session& s, DistMatrix a, DistMatrix b, DistMatrix c, double alpha, double beta,
          bool transA, bool transB) {
  OpDescriptor op = makeOp(OpCode::Gemm);
  op.ids[0] = a.id();
  op.ids[1] = b.id();
  op.ids[2] = c.id();
  op.s0 = alpha;
  op.s1 = beta;
  op.flags[0] = transA ? 1 : 0;
  op.flags[1] = transB ? 1 : 0;
  op.flags[2] = s.deterministic() ? 1 : 0;
  s.awaitAcks(s.issueOp(std::move(op)));
}

void addRowColSum(Session& s, DistMatrix a, DistMatrix rowAcc, DistMatrix colAcc, double alpha,
                  bool deterministic) {
  OpDescriptor op = makeOp(OpCode::AddRowColSum);
  op.ids[0] = a.id();
  op.ids[1] = rowAcc.id();
  op.ids[2] = colAcc.id();
  op.s0 = alpha;
  op.flags[0] = deterministic ? 1 : 0;
  s.awaitAcks(s.issueOp(std::move(op)));
}

namespace {
void unaryOp(Session& s, UnaryKind kind, DistMatrix x, DistMatrix dst, double alpha) {
  OpDescriptor op = makeOp(OpCode::EwUnary);
  op.ids[0] = x.id();
  op.ids[1] = dst.id();
  op.s0 = alpha;
  op.flags[0] = static_cast<std::uint8_t>(kind);
  s.awaitAcks(s.issueOp(std::move(op)));
}

void binaryOp(Session& s, BinaryKind kind, DistMatrix x, DistMatrix y, DistMatrix dst,
              double alpha = 0.0) {
  OpDescriptor op = makeOp(OpCode::EwBinary);
  op.ids[0] = x.id();
  op.ids[1] = y.id();
  op.ids[2] = dst.id();
  op.s0 = alpha;
  op.flags[0] = static_cast<std::uint8_t>(kind);
  s.awaitAcks(s.issueOp(std::move(op)));
}
}  // namespace

void relu(Session& s, DistMatrix x, DistMatrix dst) { unaryOp(s, UnaryKind::Relu, x, dst, 0.0); }
void mulScalar(Session& s, DistMatrix x, double alpha) {
  unaryOp(s, UnaryKind::MulScalar, x, x, alpha);
}
void addMatrices(Session& s, DistMatrix x, DistMatrix y, DistMatrix dst) {
  binaryOp(s, BinaryKind::Add, x, y, dst);
}
void subMatrices(Session& s, DistMatrix x, DistMatrix y, DistMatrix dst) {
  binaryOp(s, BinaryKind::Sub, x, y, dst);
}
void axpy(Session& s, double alpha, DistMatrix x, DistMatrix y) {
  binaryOp(s, BinaryKind::Axpy, x, y, y, alpha);
}
void reluGrad(Session& s, DistMatrix preact, DistMatrix grad) {
  binaryOp(s, BinaryKind::ReluGrad, preact, grad, grad);
}
void biasAdd(Session& s, DistMatrix x, DistMatrix bias) {
  binaryOp(s, BinaryKind::BiasAdd, x, bias, x);
}
void copyMatrix(Session& s, DistMatrix src, DistMatrix dst) {
  binaryOp(s, BinaryKind::Copy, src, dst, dst);
}
void castPrecision(Session& s, DistMatrix src, DistMatrix dst) { copyMatrix(s, src, dst); }

void setConst(Session& s, DistMatrix m, double value) {
  OpDescriptor op = makeOp(OpCode::SetConst);
  op.ids[0] = m.id();
  op.s0 = value;
  s.awaitAcks(s.issueOp(std::move(op)));
}

void softmaxRows(Session& s, DistMatrix a) {
  OpDescriptor op = makeOp(OpCode::SoftmaxRows);
  op.ids[0] = a.id();
  s.awaitAcks(s.issueOp(std::move(op)));
}

void subtractOneHot(Session& s, DistMatrix probs, DistMatrix labels) {
  OpDescriptor op = makeOp(OpCode::SubtractOneHot);
  op.ids[0] = probs.id();
  op.ids[1] = labels.id();
  s.awaitAcks(s.issueOp(std::move(op)));
}

double logLossMean(Session& s, DistMatrix probs, DistMatrix labels) {
  OpDescriptor op = makeOp(OpCode::LogLossGather);
  op.ids[0] = probs.id();
  op.ids[1] = labels.id();
  OpDescriptor probe = op;  // plan before the ids move
  const std::uint64_t execId = s.issueOp(std::move(op));
  const kernels::LossPlan plan = kernels::planLogLoss(s.table(), probe);
  struct Band {
    std::uint64_t rowStart;
    std::vector<double> terms;
  };
  std::vector<Band> bands;
  for (std::size_t li = 0; li < plan.leaders.size(); ++li) {
    const auto bytes = s.takeMasterPiece(execId, plan.firstOutPiece + static_cast<std::uint32_t>(li));
    WireReader r(bytes);
    Band b;
    b.rowStart = r.u64();
    b.terms.resize(r.u32());
    for (double& t : b.terms) t = r.f64();
    bands.push_back(std::move(b));
  }
  s.awaitAcks(execId);
  std::sort(bands.begin(), bands.end(),
            [](const Band& a, const Band& b) { return a.rowStart < b.rowStart; });
  double sum = 0.0;
  std::uint64_t n = 0;
  for (const Band& b : bands) {
    for (double t : b.terms) sum += t;
    n += b.terms.size();
  }
  return sum / static_cast<double>(n);
}

void conv2dForward(Session& s, DistMatrix input, DistMatrix filters, DistMatrix output,
                   kernels::ConvGeometry g) {
  const std::uint64_t outHW = static_cast<std::uint64_t>(g.outH()) * g.outW();
  const std::uint64_t patchCols = static_cast<std::uint64_t>(g.channels) * g.kh * g.kw;
  if (filters.rows() != g.kernels || filters.cols() != patchCols)
    throw Error("conv: filters must be K x (C*R*S)");
  if (output.rows() != g.batch || output.cols() != g.kernels * outHW)
    throw Error("conv: output must be N x (K*H'*W')");

  // Full local copies of the input make the patch build communication-free.
  if (s.workerCount() > 1 && !s.descriptor(input.id()).replicaFresh()) s.replicateSync(input);

  const auto group = makeWorkerGroup(s.workerCount());
  const Precision cp = kernels::computePrecision(
      {input.precision(), filters.precision(), output.precision()});
  DistMatrix patches = s.createMatrix(static_cast<std::uint64_t>(g.batch) * outHW, patchCols, cp,
                                      makeRowBlockLayout(g.batch * outHW, patchCols, group));
  DistMatrix lowered = s.createMatrix(static_cast<std::uint64_t>(g.batch) * outHW, g.kernels, cp,
                                      makeRowBlockLayout(g.batch * outHW, g.kernels, group));

  OpDescriptor im = makeOp(OpCode::Im2col);
  im.ids[0] = input.id();
  im.ids[1] = patches.id();
  im.blob = g.encode();
  s.awaitAcks(s.issueOp(std::move(im)));

  gemm(s, patches, filters, lowered, 1.0, 0.0, false, true);

  OpDescriptor rp = makeOp(OpCode::ConvRepack);
  rp.ids[0] = lowered.id();
  rp.ids[1] = output.id();
  rp.ids[2] = g.kernels;
  rp.ids[3] = outHW;
  s.awaitAcks(s.issueOp(std::move(rp)));

  s.destroy(lowered);
  s.destroy(patches);
}

}  // namespace gridmath
