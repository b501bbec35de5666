// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

namespace gridmath {

enum class EventKind : std::uint8_t {
  PhaseMark,       // master annotation; label carries the phase name
  OpStart,         // worker begins executing an op (a = execId, b = opcode)
  OpComputeStart,  // local arithmetic begins (a = execId, b = opcode)
  OpComputeEnd,
  OpEnd,
  ReplInitiate,   // a = matrixId, b = version
  ReplChunkSent,  // a = matrixId, b = bytes
  ReplicaValid,   // this worker's full copy became readable (a = matrixId, b = version)
  ReplFailed,
  BatchProduced,  // dataload handoff events (a = batch index)
  BatchConsumed,
};

struct TraceEvent {
  std::uint64_t seq = 0;
  std::int64_t actor = 0;  // worker rank, -1 for master
  EventKind kind{};
  std::uint64_t a = 0;
  std::uint64_t b = 0;
  std::string label;
};

// Global, append-only event log shared by master and workers. The sequence
// counter gives a total order that tests use to check overlap claims.
class EventTrace {
 public:
  std::uint64_t record(std::int64_t actor, EventKind kind, std::uint64_t a = 0, std::uint64_t b = 0,
                       std::string label = {}) {
    const std::uint64_t s = seq_.fetch_add(1, std::memory_order_relaxed);
    std::lock_guard<std::mutex> g(mu_);
    events_.push_back(TraceEvent{s, actor, kind, a, b, std::move(label)});
    return s;
  }

  std::vector<TraceEvent> snapshot() const {
    std::lock_guard<std::mutex> g(mu_);
    auto copy = events_;
    std::sort(copy.begin(), copy.end(),
              [](const TraceEvent& x, const TraceEvent& y) { return x.seq < y.seq; });
    return copy;
  }

  void clear() {
    std::lock_guard<std::mutex> g(mu_);
    events_.clear();
  }

 private:
  mutable std::mutex mu_;
  std::atomic<std::uint64_t> seq_{0};
  std::vector<TraceEvent> events_;
};

}  // namespace gridmath
