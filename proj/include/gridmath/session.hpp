// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "gridmath/fabric.hpp"
#include "gridmath/kernels.hpp"
#include "gridmath/pool.hpp"
#include "gridmath/worker.hpp"

namespace gridmath {

class Session;

// User-facing handle; valid while the session lives and the matrix exists.
class DistMatrix {
 public:
  DistMatrix() = default;
  DistMatrix(Session* s, std::uint64_t id) : session_(s), id_(id) {}
  std::uint64_t id() const { return id_; }
  std::uint64_t rows() const;
  std::uint64_t cols() const;
  Precision precision() const;
  bool valid() const { return session_ != nullptr; }

 private:
  Session* session_ = nullptr;
  std::uint64_t id_ = 0;
};

enum class ReplState : std::uint8_t { InFlight, Done, Failed };

struct ReplicationHandle {
  std::uint64_t matrixId = 0;
  std::uint64_t version = 0;
};

struct SessionOptions {
  std::uint32_t workers = 1;
  bool deterministic = true;
  std::uint64_t replicationChunkBytes = 1ull << 20;
  bool simulated = false;
  CostModel cost{};
  std::uint64_t rootSeed = 0;
  bool checkMetadataEveryOp = false;
};

struct WorkerStatsRow {
  std::uint64_t osAllocations = 0;
  std::uint64_t reuses = 0;
  std::uint64_t frees = 0;
  std::uint64_t heldBytes = 0;
  std::uint64_t residentBytes = 0;
};

// The master: single source of truth for descriptors, driver of all ops.
class Session {
 public:
  explicit Session(SessionOptions opts = {});
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  // --- matrix lifecycle -----------------------------------------------------
  DistMatrix createMatrix(std::uint64_t rows, std::uint64_t cols, Precision p,
                          const Layout& layout);
  void destroy(DistMatrix m);
  void setData(DistMatrix m, const std::vector<double>& rowMajor);
  void setDataF32(DistMatrix m, const std::vector<float>& rowMajor);
  std::vector<double> getData(DistMatrix m);
  std::vector<std::uint8_t> getDataRaw(DistMatrix m);
  void reshape(DistMatrix m, const Layout& newLayout,
               std::optional<Precision> newPrecision = std::nullopt);

  // --- replication ------------------------------------------------------------
  ReplicationHandle replicateAsync(DistMatrix m);
  void replicateSync(DistMatrix m);
  ReplState wait(const ReplicationHandle& h);
  ReplState handleState(const ReplicationHandle& h) const;

  void distributeSeeds(std::uint64_t rootSeed);
  std::uint64_t rootSeed() const { return rootSeed_; }

  // --- pipeline recording -----------------------------------------------------
  std::uint64_t beginRecord();
  void endRecord();
  void replay(std::uint64_t pipelineId);

  // --- checkpoint-restart -------------------------------------------------------
  void checkpoint(const std::string& path);
  static std::unique_ptr<Session> restore(const std::string& path, SessionOptions opts);

  // --- introspection ----------------------------------------------------------
  void verifyMetadataConsistency();
  std::vector<WorkerStatsRow> queryWorkerStats();
  WorkerStatsRow masterPoolStats() const;
  FabricStats fabricStats() const { return fabric_->stats(); }
  EventTrace& trace() { return fabric_->trace(); }
  double simulatedElapsed() const { return fabric_->simulatedElapsed(); }
  Fabric& fabric() { return *fabric_; }
  void phaseMark(const std::string& label);

  const MatrixDescriptor& descriptor(std::uint64_t id) const;
  const DescriptorTable& table() const { return table_; }
  std::uint32_t workerCount() const { return opts_.workers; }
  bool deterministic() const { return opts_.deterministic; }
  const SessionOptions& options() const { return opts_; }

  // Direct (same-address-space) view of a worker, for tests that inspect
  // worker state after quiescence.
  const WorkerRuntime& workerForTest(std::uint32_t rank) const { return *workers_[rank]; }

  // --- op plumbing (used by kernel wrappers and the demo) -----------------------
  std::uint64_t issueOp(OpDescriptor op, std::uint64_t extraExecIds = 0);
  std::vector<std::pair<std::uint32_t, Completion>> awaitAcks(std::uint64_t execId);
  std::vector<std::uint8_t> takeMasterPiece(std::uint64_t execId, std::uint32_t pieceId);
  void sendMasterPiece(std::uint32_t dest, std::uint64_t execId, std::uint32_t pieceId,
                       std::vector<std::uint8_t> bytes);
  PoolAllocator& masterPool() { return masterPool_; }

 private:
  struct ReplJob {
    std::set<std::uint32_t> done;
    bool failed = false;
  };

  void scatterFull(const MatrixDescriptor& d, const std::uint8_t* image, std::uint64_t execId);
  void gatherFull(const MatrixDescriptor& d, std::uint8_t* image, std::uint64_t execId);
  DistMatrix createWithDescriptor(MatrixDescriptor d);
  void absorb(std::uint32_t source, const Completion& c);
  Message pumpMaster();
  ReplState jobState(const ReplicationHandle& h) const;

  SessionOptions opts_;
  std::unique_ptr<Fabric> fabric_;
  std::vector<std::unique_ptr<WorkerRuntime>> workers_;
  std::vector<std::thread> threads_;
  DescriptorTable table_;
  PoolAllocator masterPool_;
  std::uint64_t rootSeed_ = 0;
  std::uint64_t nextMatrixId_ = 1;
  std::uint64_t nextExec_ = 1;
  std::uint64_t nextPipelineId_ = 1;
  std::uint64_t recording_ = 0;
  std::map<std::uint64_t, std::vector<OpDescriptor>> pipelines_;
  std::set<std::uint64_t> closedPipelines_;
  std::map<std::pair<std::uint64_t, std::uint64_t>, ReplJob> replJobs_;
  std::map<std::uint64_t, std::map<std::uint32_t, std::vector<std::uint8_t>>> masterPieces_;
  std::map<std::uint64_t, std::vector<std::pair<std::uint32_t, Completion>>> ackStash_;
  bool inConsistencyCheck_ = false;
  bool shutdownSent_ = false;
};

// --- distributed kernels (master entry points) -------------------------------

void gemm(Session& s, DistMatrix a, DistMatrix b, DistMatrix c, double alpha, double beta,
          bool transA = false, bool transB = false);
void addRowColSum(Session& s, DistMatrix a, DistMatrix rowAcc, DistMatrix colAcc, double alpha,
                  bool deterministic);
void relu(Session& s, DistMatrix x, DistMatrix dst);
void mulScalar(Session& s, DistMatrix x, double alpha);
void addMatrices(Session& s, DistMatrix x, DistMatrix y, DistMatrix dst);
void subMatrices(Session& s, DistMatrix x, DistMatrix y, DistMatrix dst);
void axpy(Session& s, double alpha, DistMatrix x, DistMatrix y);
void reluGrad(Session& s, DistMatrix preact, DistMatrix grad);
void biasAdd(Session& s, DistMatrix x, DistMatrix bias);
void copyMatrix(Session& s, DistMatrix src, DistMatrix dst);
void castPrecision(Session& s, DistMatrix src, DistMatrix dst);
void setConst(Session& s, DistMatrix m, double value);
void softmaxRows(Session& s, DistMatrix a);
void subtractOneHot(Session& s, DistMatrix probs, DistMatrix labels);
double logLossMean(Session& s, DistMatrix probs, DistMatrix labels);
void conv2dForward(Session& s, DistMatrix input, DistMatrix filters, DistMatrix output,
                   kernels::ConvGeometry g);

}  // namespace gridmath
