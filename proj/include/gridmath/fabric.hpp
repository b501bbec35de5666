// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "gridmath/common.hpp"
#include "gridmath/trace.hpp"
#include "gridmath/wire.hpp"

namespace gridmath {

enum class MsgKind : std::uint8_t { Control = 0, Data = 1, Completion = 2 };

// Master endpoint id on the wire.
inline constexpr std::uint32_t kMasterRank = 0xFFFFFFFFu;

struct Message {
  MsgKind kind = MsgKind::Data;
  std::uint32_t source = 0;
  std::uint32_t dest = 0;
  std::uint32_t tag = 0;
  std::vector<std::uint8_t> payload;
};

// Frame: u8 kind, u32 source, u32 dest, u32 tag, u64 length, payload.
std::vector<std::uint8_t> encodeFrame(const Message& m);
Message decodeFrame(const std::uint8_t* data, std::size_t size);

struct LinkStats {
  std::uint64_t messageCount = 0;
  std::uint64_t byteCount = 0;  // payload bytes
};

struct FabricStats {
  // (src, dst) -> per-kind counters, kind indexed 0..2.
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::array<LinkStats, 3>> perLink;

  LinkStats totalByKind(MsgKind k) const;
  LinkStats total() const;
};

struct CostModel {
  double latencySeconds = 0.0;        // alpha, per message
  double inverseBandwidth = 0.0;      // beta, seconds per payload byte
  double perWorkerComputeRate = 1e9;  // elements per second
};

class Fabric;

// Single-consumer message queue. recvWhere keeps a stash so a consumer can
// pull the next message matching a predicate while unrelated traffic stays
// queued in arrival order.
class Endpoint {
 public:
  Endpoint(Fabric& f, std::uint32_t id) : fabric_(f), id_(id) {}

  std::uint32_t id() const { return id_; }

  Message recv();
  std::optional<Message> tryRecv();

  // Returns the first stashed or incoming message satisfying pred. While the
  // queue is empty, calls idle() (if provided); when idle() reports no
  // progress, blocks on the queue.
  Message recvWhere(const std::function<bool(const Message&)>& pred,
                    const std::function<bool()>& idle = nullptr);

  void close();
  bool closed() const;

  std::uint64_t receivedBytes() const;

 private:
  friend class Fabric;
  void push(std::vector<std::uint8_t> frame);

  Fabric& fabric_;
  std::uint32_t id_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::vector<std::uint8_t>> queue_;
  std::deque<Message> stash_;
  std::uint64_t recvBytes_ = 0;
  bool closed_ = false;
};

// In-process message fabric: one master endpoint plus nWorkers worker
// endpoints. Every send is encoded through the frame codec so the wire
// format is exercised on each hop. A simulated fabric additionally accrues
// per-actor cost in integer picoseconds, which keeps the virtual clock an
// order-independent (hence deterministic) function of the event multiset.
class Fabric {
 public:
  static std::unique_ptr<Fabric> inProcess(std::uint32_t nWorkers);
  static std::unique_ptr<Fabric> simulated(std::uint32_t nWorkers, const CostModel& cost);

  std::uint32_t workerCount() const { return nWorkers_; }
  bool isSimulated() const { return simulated_; }
  const CostModel& costModel() const { return cost_; }

  Endpoint& master() { return *master_; }
  Endpoint& worker(std::uint32_t rank);

  void send(Message m);

  // One Control message to every worker; the payload must be non-empty and,
  // when a validator is installed, must decode as an op descriptor.
  void broadcastControl(std::vector<std::uint8_t> payload, std::uint32_t tag = 0);

  void setControlValidator(std::function<bool(const std::vector<std::uint8_t>&)> v) {
    controlValidator_ = std::move(v);
  }

  FabricStats stats() const;
  std::uint64_t sentBytesTotal() const;

  // Simulated backend only: records elements of local arithmetic for an actor.
  void addCompute(std::uint32_t actor, std::uint64_t elements);

  // Simulated backend only: max over actors of compute + serialized link time.
  double simulatedElapsed() const;

  void closeAll();

  EventTrace& trace() { return trace_; }

  std::uint64_t maxFrameBytes() const { return maxFrame_; }

 private:
  Fabric(std::uint32_t nWorkers, bool simulated, const CostModel& cost);

  Endpoint& endpointFor(std::uint32_t id);
  void account(const Message& m);

  std::uint32_t nWorkers_;
  bool simulated_;
  CostModel cost_;
  std::uint64_t maxFrame_;

  std::unique_ptr<Endpoint> master_;
  std::vector<std::unique_ptr<Endpoint>> workers_;

  mutable std::mutex statsMu_;
  FabricStats stats_;
  std::uint64_t sentBytes_ = 0;

  mutable std::mutex costMu_;
  std::map<std::uint32_t, std::uint64_t> actorPicos_;

  std::function<bool(const std::vector<std::uint8_t>&)> controlValidator_;
  EventTrace trace_;
};

}  // namespace gridmath
