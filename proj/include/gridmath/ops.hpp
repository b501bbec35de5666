// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "gridmath/descriptor.hpp"
#include "gridmath/wire.hpp"

namespace gridmath {

// Data-plane payload discriminator: replication chunks use this tag, op
// pieces use the low bits of their exec id.
inline constexpr std::uint32_t kReplChunkTag = 0xFFFFFFFFu;

enum class OpCode : std::uint32_t {
  CreateMatrix = 1,
  DestroyMatrix,
  SetData,
  GetData,
  SetConst,
  Gemm,
  AddRowColSum,
  EwUnary,
  EwBinary,
  SoftmaxRows,
  SubtractOneHot,
  LogLossGather,
  Im2col,
  ConvRepack,
  Reshape,
  ReplicateStart,
  Replay,
  DistributeSeeds,
  QueryStats,
  MetaChecksum,
  Snapshot,
  Shutdown,
};

enum class UnaryKind : std::uint8_t { Relu = 0, MulScalar = 1 };
enum class BinaryKind : std::uint8_t { Add = 0, Sub = 1, Axpy = 2, ReluGrad = 3, Copy = 4, BiasAdd = 5 };

// One broadcast control message. A fixed little shape (four operand ids, two
// scalars, four flag bytes, optional blob) keeps the codec trivial; each op
// reads only the slots it uses.
struct OpDescriptor {
  std::uint64_t execId = 0;
  std::uint64_t recordPipeline = 0;  // nonzero while a recording is open
  OpCode opcode = OpCode::Shutdown;
  std::uint64_t ids[4] = {0, 0, 0, 0};
  double s0 = 0.0;
  double s1 = 0.0;
  std::uint8_t flags[4] = {0, 0, 0, 0};
  std::vector<std::uint8_t> blob;

  std::vector<std::uint8_t> encode() const;
  static OpDescriptor decode(const std::vector<std::uint8_t>& payload);
  static bool canDecode(const std::vector<std::uint8_t>& payload);
};

// Completion payload, worker -> master.
enum class CompletionKind : std::uint32_t { OpAck = 0, ReplicaDone = 1, ReplicaFailed = 2 };

struct Completion {
  std::uint64_t execId = 0;
  std::uint32_t status = 0;  // 0 ok, 1 error
  CompletionKind kind = CompletionKind::OpAck;
  std::uint64_t aux0 = 0;
  std::uint64_t aux1 = 0;
  double scalar = 0.0;
  std::vector<std::uint8_t> blob;

  std::vector<std::uint8_t> encode() const;
  static Completion decode(const std::vector<std::uint8_t>& payload);
};

// Op data piece: header {execId, pieceId} then raw storage bytes, row-major
// within the piece's rectangle.
struct PieceHeader {
  std::uint64_t execId = 0;
  std::uint32_t pieceId = 0;
};

std::vector<std::uint8_t> encodePiece(PieceHeader h, const std::uint8_t* data, std::size_t n);
PieceHeader decodePieceHeader(const std::vector<std::uint8_t>& payload, std::size_t& dataOffset);

// Replication chunk payload (pinned): u64 matrixId, u64 version, u64 offset,
// u32 length, bytes.
struct ChunkHeader {
  std::uint64_t matrixId = 0;
  std::uint64_t version = 0;
  std::uint64_t offset = 0;
  std::uint32_t length = 0;
};
inline constexpr std::size_t kChunkHeaderBytes = 8 + 8 + 8 + 4;

std::vector<std::uint8_t> encodeChunk(const ChunkHeader& h, const std::uint8_t* data);
ChunkHeader decodeChunkHeader(const std::vector<std::uint8_t>& payload, std::size_t& dataOffset);

// Applies an op's metadata side effects (version bumps, table edits) to a
// descriptor table. Master and workers run the exact same function, which is
// what keeps their tables in lockstep.
void applyOpMetadata(const OpDescriptor& op, DescriptorTable& table);

// Matrix ids whose version the op bumps (the mutation set).
std::vector<std::uint64_t> mutatedMatrices(const OpDescriptor& op);

}  // namespace gridmath
