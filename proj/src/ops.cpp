// SPDX-License-Identifier: Apache-2.0
#include "gridmath/ops.hpp"

namespace gridmath {

std::vector<std::uint8_t> OpDescriptor::encode() const {
  WireWriter w;
  w.u64(execId);
  w.u64(recordPipeline);
  w.u32(static_cast<std::uint32_t>(opcode));
  for (auto id : ids) w.u64(id);
  w.f64(s0);
  w.f64(s1);
  for (auto f : flags) w.u8(f);
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.bytes(blob.data(), blob.size());
  return w.take();
}

OpDescriptor OpDescriptor::decode(const std::vector<std::uint8_t>& payload) {
  WireReader r(payload);
  OpDescriptor op;
  op.execId = r.u64();
  op.recordPipeline = r.u64();
  const std::uint32_t code = r.u32();
  if (code < static_cast<std::uint32_t>(OpCode::CreateMatrix) ||
      code > static_cast<std::uint32_t>(OpCode::Shutdown))
    throw Error("op: unknown opcode " + std::to_string(code));
  op.opcode = static_cast<OpCode>(code);
  for (auto& id : op.ids) id = r.u64();
  op.s0 = r.f64();
  op.s1 = r.f64();
  for (auto& f : op.flags) f = r.u8();
  const std::uint32_t blobLen = r.u32();
  op.blob.resize(blobLen);
  r.bytes(op.blob.data(), blobLen);
  if (!r.done()) throw Error("op: trailing bytes");
  return op;
}

bool OpDescriptor::canDecode(const std::vector<std::uint8_t>& payload) {
  try {
    (void)decode(payload);
    return true;
  } catch (const Error&) {
    return false;
  }
}

std::vector<std::uint8_t> Completion::encode() const {
  WireWriter w;
  w.u64(execId);
  w.u32(status);
  w.u32(static_cast<std::uint32_t>(kind));
  w.u64(aux0);
  w.u64(aux1);
  w.f64(scalar);
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.bytes(blob.data(), blob.size());
  return w.take();
}

Completion Completion::decode(const std::vector<std::uint8_t>& payload) {
  WireReader r(payload);
  Completion c;
  c.execId = r.u64();
  c.status = r.u32();
  c.kind = static_cast<CompletionKind>(r.u32());
  c.aux0 = r.u64();
  c.aux1 = r.u64();
  c.scalar = r.f64();
  const std::uint32_t blobLen = r.u32();
  c.blob.resize(blobLen);
  r.bytes(c.blob.data(), blobLen);
  return c;
}

std::vector<std::uint8_t> encodePiece(PieceHeader h, const std::uint8_t* data, std::size_t n) {
  WireWriter w;
  w.u64(h.execId);
  w.u32(h.pieceId);
  w.u32(0);
  w.bytes(data, n);
  return w.take();
}

PieceHeader decodePieceHeader(const std::vector<std::uint8_t>& payload, std::size_t& dataOffset) {
  WireReader r(payload);
  PieceHeader h;
  h.execId = r.u64();
  h.pieceId = r.u32();
  (void)r.u32();
  dataOffset = 16;
  return h;
}

std::vector<std::uint8_t> encodeChunk(const ChunkHeader& h, const std::uint8_t* data) {
  WireWriter w;
  w.u64(h.matrixId);
  w.u64(h.version);
  w.u64(h.offset);
  w.u32(h.length);
  w.bytes(data, h.length);
  return w.take();
}

ChunkHeader decodeChunkHeader(const std::vector<std::uint8_t>& payload, std::size_t& dataOffset) {
  WireReader r(payload);
  ChunkHeader h;
  h.matrixId = r.u64();
  h.version = r.u64();
  h.offset = r.u64();
  h.length = r.u32();
  if (h.length != r.remaining()) throw Error("chunk: length mismatch");
  dataOffset = kChunkHeaderBytes;
  return h;
}

std::vector<std::uint64_t> mutatedMatrices(const OpDescriptor& op) {
  switch (op.opcode) {
    case OpCode::SetData:
    case OpCode::SetConst:
    case OpCode::SoftmaxRows:
      return {op.ids[0]};
    case OpCode::SubtractOneHot:
      return {op.ids[0]};
    case OpCode::Gemm:
      return {op.ids[2]};
    case OpCode::AddRowColSum:
      return {op.ids[1], op.ids[2]};
    case OpCode::EwUnary:
      return {op.ids[1]};
    case OpCode::EwBinary:
      return {op.ids[2]};
    case OpCode::Im2col:
      return {op.ids[1]};
    case OpCode::ConvRepack:
      return {op.ids[1]};
    case OpCode::Reshape:
      return {op.ids[0]};
    default:
      return {};
  }
}

void applyOpMetadata(const OpDescriptor& op, DescriptorTable& table) {
  switch (op.opcode) {
    case OpCode::CreateMatrix: {
      WireReader r(op.blob);
      MatrixDescriptor d = decodeDescriptor(r);
      table[d.matrixId] = std::move(d);
      return;
    }
    case OpCode::DestroyMatrix:
      table.erase(op.ids[0]);
      return;
    case OpCode::Reshape: {
      WireReader r(op.blob);
      MatrixDescriptor d = decodeDescriptor(r);
      table[d.matrixId] = std::move(d);  // replicatedVersion resets with the new descriptor
      return;
    }
    case OpCode::ReplicateStart: {
      // Marks "a full replica at the current version exists everywhere";
      // kernels read the operand locally while this holds.
      auto it = table.find(op.ids[0]);
      if (it != table.end()) it->second.replicatedVersion = it->second.version;
      return;
    }
    default:
      break;
  }
  for (std::uint64_t id : mutatedMatrices(op)) {
    auto it = table.find(id);
    if (it != table.end()) it->second.version += 1;
  }
}

}  // namespace gridmath
