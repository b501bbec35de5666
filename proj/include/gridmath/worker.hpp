// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "gridmath/fabric.hpp"
#include "gridmath/ops.hpp"
#include "gridmath/pieces.hpp"
#include "gridmath/pool.hpp"

namespace gridmath {

struct Tile {
  TileExtent extent;
  PoolBuffer buf;
};

// Per-worker resident tiles. Buffers are row-major over their extent and
// sized exactly rowCount * colCount * precisionBytes.
class TileStore {
 public:
  void install(std::uint64_t matrixId, std::vector<Tile> tiles);
  void remove(std::uint64_t matrixId);
  std::vector<Tile>& tilesOf(std::uint64_t matrixId);
  const std::vector<Tile>* find(std::uint64_t matrixId) const;
  Tile& tileContaining(std::uint64_t matrixId, const Rect& rect);
  std::uint64_t residentBytes() const { return residentBytes_; }
  const std::map<std::uint64_t, std::vector<Tile>>& all() const { return tiles_; }

 private:
  std::map<std::uint64_t, std::vector<Tile>> tiles_;
  std::uint64_t residentBytes_ = 0;
};

enum class ReplicaState : std::uint8_t { Valid = 0, Pending = 1, Stale = 2 };
enum class ReplicaReadStatus : std::uint8_t { Ok = 0, Missing = 1, Pending = 2, Stale = 3 };

struct ReplicaEntry {
  PoolBuffer full;  // entire matrix, row-major, storage precision
  std::uint64_t version = 0;
  ReplicaState state = ReplicaState::Pending;
  std::uint64_t bytesGot = 0;
  std::uint64_t bytesExpected = 0;
};

// Outgoing replication work: one queued (dest, byte range) per chunk, pushed
// one message per pump step so compute traffic interleaves.
struct ReplSendJob {
  std::uint64_t matrixId = 0;
  std::uint64_t version = 0;
  struct PendingChunk {
    std::uint32_t dest;
    std::uint64_t offset;
    std::uint32_t length;
  };
  std::deque<PendingChunk> chunks;
};

class WorkerRuntime {
 public:
  WorkerRuntime(Fabric& fabric, std::uint32_t rank);

  // Main loop; returns when a Shutdown op arrives or the fabric closes.
  void run();

  std::uint32_t rank() const { return rank_; }
  std::uint32_t workerCount() const { return fabric_.workerCount(); }
  Fabric& fabric() { return fabric_; }
  PoolAllocator& pool() { return pool_; }
  TileStore& store() { return store_; }
  DescriptorTable& descriptors() { return descs_; }
  std::uint64_t seed() const { return seed_; }

  const MatrixDescriptor& descriptor(std::uint64_t id) const;

  // --- replica cache -------------------------------------------------------
  void storeReplica(std::uint64_t matrixId, const std::uint8_t* data, std::size_t n,
                    std::uint64_t version);
  ReplicaReadStatus readReplica(std::uint64_t matrixId, const std::uint8_t** data,
                                std::size_t* n) const;
  void dropReplica(std::uint64_t matrixId) { replicas_.erase(matrixId); }
  const std::map<std::uint64_t, ReplicaEntry>& replicas() const { return replicas_; }

  // Blocks (while progressing other traffic) until this worker's replica of
  // the matrix is valid at the current descriptor version.
  void waitReplicaValid(std::uint64_t matrixId);
  const std::uint8_t* replicaBytes(std::uint64_t matrixId) const;

  // --- op piece plumbing (used by kernels) ---------------------------------
  void sendOpPiece(std::uint32_t dest, std::uint64_t execId, std::uint32_t pieceId,
                   std::vector<std::uint8_t> bytes);
  std::vector<std::uint8_t> takePiece(std::uint64_t execId, std::uint32_t pieceId);
  bool pieceReady(std::uint64_t execId, std::uint32_t pieceId) const;
  void sendCompletion(const Completion& c);
  // One pump step: handle one incoming message if any, otherwise push one
  // pending replication chunk. Returns false when there was nothing to do.
  bool pumpOnce(bool mayBlock);

  // Executes a single already-decoded op (also the replay path). Public so
  // tests can drive a worker without a thread.
  void executeOp(const OpDescriptor& op);

  const std::map<std::uint64_t, std::vector<OpDescriptor>>& pipelines() const {
    return pipelines_;
  }

 private:
  friend struct WorkerAccess;
  void dispatch(const OpDescriptor& op);
  void handleData(const Message& m);
  void applyChunk(const std::vector<std::uint8_t>& payload);
  void applyChunkBytes(const ChunkHeader& h, const std::uint8_t* data);
  void startReplication(std::uint64_t matrixId, std::uint64_t chunkSize);
  ReplicaEntry& ensurePendingEntry(std::uint64_t matrixId, std::uint64_t version);
  void markReplicaComplete(std::uint64_t matrixId, ReplicaEntry& e);
  void failPendingReplica(std::uint64_t matrixId, std::uint64_t version);
  void applyMetadataAndInvalidate(const OpDescriptor& op);
  bool progressSendsOnce();

  Fabric& fabric_;
  Endpoint& ep_;
  std::uint32_t rank_;
  PoolAllocator pool_;
  TileStore store_;
  DescriptorTable descs_;
  std::map<std::uint64_t, ReplicaEntry> replicas_;
  std::deque<ReplSendJob> sendJobs_;
  std::deque<OpDescriptor> controlQueue_;
  std::map<std::uint64_t, std::map<std::uint32_t, std::vector<std::uint8_t>>> pendingPieces_;
  // Chunks that arrived ahead of our local metadata state.
  std::vector<std::vector<std::uint8_t>> futureChunks_;
  std::set<std::pair<std::uint64_t, std::uint64_t>> reportedFailures_;
  std::map<std::uint64_t, std::vector<OpDescriptor>> pipelines_;
  std::uint64_t seed_ = 0;
};

}  // namespace gridmath
