// SPDX-License-Identifier: Apache-2.0
#include "gridmath/fabric.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>

namespace gridmath {

namespace {
constexpr std::size_t kFrameHeader = 1 + 4 + 4 + 4 + 8;
constexpr std::uint64_t kDefaultMaxFrame = 64ull << 20;
}  // namespace

std::vector<std::uint8_t> encodeFrame(const Message& m) {
  WireWriter w;
  w.u8(static_cast<std::uint8_t>(m.kind));
  w.u32(m.source);
  w.u32(m.dest);
  w.u32(m.tag);
  w.u64(m.payload.size());
  w.bytes(m.payload.data(), m.payload.size());
  return w.take();
}

Message decodeFrame(const std::uint8_t* data, std::size_t size) {
  WireReader r(data, size);
  Message m;
  const std::uint8_t kind = r.u8();
  if (kind > 2) throw Error("frame: bad message kind");
  m.kind = static_cast<MsgKind>(kind);
  m.source = r.u32();
  m.dest = r.u32();
  m.tag = r.u32();
  const std::uint64_t len = r.u64();
  if (len != r.remaining()) throw Error("frame: length mismatch");
  m.payload.resize(len);
  r.bytes(m.payload.data(), len);
  return m;
}

LinkStats FabricStats::totalByKind(MsgKind k) const {
  LinkStats t;
  for (const auto& [link, kinds] : perLink) {
    t.messageCount += kinds[static_cast<int>(k)].messageCount;
    t.byteCount += kinds[static_cast<int>(k)].byteCount;
  }
  return t;
}

LinkStats FabricStats::total() const {
  LinkStats t;
  for (int k = 0; k < 3; ++k) {
    const LinkStats s = totalByKind(static_cast<MsgKind>(k));
    t.messageCount += s.messageCount;
    t.byteCount += s.byteCount;
  }
  return t;
}

Message Endpoint::recv() {
  std::unique_lock<std::mutex> lk(mu_);
  if (!stash_.empty()) {
    Message m = std::move(stash_.front());
    stash_.pop_front();
    return m;
  }
  cv_.wait(lk, [&] { return !queue_.empty() || closed_; });
  if (queue_.empty()) throw Error("recv on closed endpoint");
  auto frame = std::move(queue_.front());
  queue_.pop_front();
  recvBytes_ += frame.size() - kFrameHeader;
  lk.unlock();
  return decodeFrame(frame.data(), frame.size());
}

std::optional<Message> Endpoint::tryRecv() {
  std::unique_lock<std::mutex> lk(mu_);
  if (!stash_.empty()) {
    Message m = std::move(stash_.front());
    stash_.pop_front();
    return m;
  }
  if (queue_.empty()) {
    if (closed_) throw Error("recv on closed endpoint");
    return std::nullopt;
  }
  auto frame = std::move(queue_.front());
  queue_.pop_front();
  recvBytes_ += frame.size() - kFrameHeader;
  lk.unlock();
  return decodeFrame(frame.data(), frame.size());
}

Message Endpoint::recvWhere(const std::function<bool(const Message&)>& pred,
                            const std::function<bool()>& idle) {
  // Scan what we already set aside first.
  {
    std::lock_guard<std::mutex> g(mu_);
    for (auto it = stash_.begin(); it != stash_.end(); ++it) {
      if (pred(*it)) {
        Message m = std::move(*it);
        stash_.erase(it);
        return m;
      }
    }
  }
  for (;;) {
    std::optional<Message> next;
    {
      std::unique_lock<std::mutex> lk(mu_);
      if (queue_.empty() && !closed_) {
        if (idle) {
          lk.unlock();
          if (idle()) continue;  // made progress elsewhere; re-check the queue
          lk.lock();
        }
        // Yield points exist between chunks, so wake periodically to let the
        // idle hook run even if no message ever arrives.
        if (idle)
          cv_.wait_for(lk, std::chrono::milliseconds(1),
                       [&] { return !queue_.empty() || closed_; });
        else
          cv_.wait(lk, [&] { return !queue_.empty() || closed_; });
      }
      if (queue_.empty()) {
        if (closed_) throw Error("recv on closed endpoint");
        continue;
      }
      auto frame = std::move(queue_.front());
      queue_.pop_front();
      recvBytes_ += frame.size() - kFrameHeader;
      lk.unlock();
      next = decodeFrame(frame.data(), frame.size());
    }
    if (pred(*next)) return std::move(*next);
    std::lock_guard<std::mutex> g(mu_);
    stash_.push_back(std::move(*next));
  }
}

void Endpoint::push(std::vector<std::uint8_t> frame) {
  std::lock_guard<std::mutex> g(mu_);
  if (closed_) throw Error("send to closed endpoint");
  queue_.push_back(std::move(frame));
  cv_.notify_one();
}

void Endpoint::close() {
  std::lock_guard<std::mutex> g(mu_);
  closed_ = true;
  cv_.notify_all();
}

bool Endpoint::closed() const {
  std::lock_guard<std::mutex> g(mu_);
  return closed_;
}

std::uint64_t Endpoint::receivedBytes() const {
  std::lock_guard<std::mutex> g(mu_);
  return recvBytes_;
}

Fabric::Fabric(std::uint32_t nWorkers, bool simulated, const CostModel& cost)
    : nWorkers_(nWorkers), simulated_(simulated), cost_(cost) {
  if (nWorkers == 0) throw Error("createFabric: need at least one worker");
  if (cost_.perWorkerComputeRate <= 0 || cost_.latencySeconds < 0 || cost_.inverseBandwidth < 0)
    throw Error("createFabric: invalid cost model");
  maxFrame_ = kDefaultMaxFrame;
  if (const char* env = std::getenv("GRIDMATH_MAX_FRAME")) {
    const std::uint64_t v = std::strtoull(env, nullptr, 10);
    if (v > 0) maxFrame_ = v;
  }
  master_ = std::make_unique<Endpoint>(*this, kMasterRank);
  workers_.reserve(nWorkers);
  for (std::uint32_t r = 0; r < nWorkers; ++r)
    workers_.push_back(std::make_unique<Endpoint>(*this, r));
}

std::unique_ptr<Fabric> Fabric::inProcess(std::uint32_t nWorkers) {
  return std::unique_ptr<Fabric>(new Fabric(nWorkers, false, CostModel{}));
}

std::unique_ptr<Fabric> Fabric::simulated(std::uint32_t nWorkers, const CostModel& cost) {
  return std::unique_ptr<Fabric>(new Fabric(nWorkers, true, cost));
}

Endpoint& Fabric::worker(std::uint32_t rank) {
  if (rank >= nWorkers_) throw Error("no such worker endpoint");
  return *workers_[rank];
}

Endpoint& Fabric::endpointFor(std::uint32_t id) {
  if (id == kMasterRank) return *master_;
  return worker(id);
}

void Fabric::account(const Message& m) {
  {
    std::lock_guard<std::mutex> g(statsMu_);
    auto& link = stats_.perLink[{m.source, m.dest}][static_cast<int>(m.kind)];
    link.messageCount += 1;
    link.byteCount += m.payload.size();
    sentBytes_ += m.payload.size();
  }
  if (simulated_) {
    const double seconds =
        cost_.latencySeconds + cost_.inverseBandwidth * static_cast<double>(m.payload.size());
    const auto picos = static_cast<std::uint64_t>(std::llround(seconds * 1e12));
    std::lock_guard<std::mutex> g(costMu_);
    actorPicos_[m.source] += picos;  // the link is serialized at both ends
    actorPicos_[m.dest] += picos;
  }
}

void Fabric::send(Message m) {
  if (m.payload.empty()) throw Error("send: empty payload");
  if (m.payload.size() > maxFrame_) throw Error("send: frame exceeds max frame size");
  Endpoint& dst = endpointFor(m.dest);
  account(m);
  dst.push(encodeFrame(m));
}

void Fabric::broadcastControl(std::vector<std::uint8_t> payload, std::uint32_t tag) {
  if (payload.empty()) throw Error("broadcastControl: empty payload");
  if (controlValidator_ && !controlValidator_(payload))
    throw Error("broadcastControl: payload does not decode as an op descriptor");
  for (std::uint32_t r = 0; r < nWorkers_; ++r) {
    Message m;
    m.kind = MsgKind::Control;
    m.source = kMasterRank;
    m.dest = r;
    m.tag = tag;
    m.payload = payload;  // one copy per worker, counted per message
    send(std::move(m));
  }
}

FabricStats Fabric::stats() const {
  std::lock_guard<std::mutex> g(statsMu_);
  return stats_;
}

std::uint64_t Fabric::sentBytesTotal() const {
  std::lock_guard<std::mutex> g(statsMu_);
  return sentBytes_;
}

void Fabric::addCompute(std::uint32_t actor, std::uint64_t elements) {
  if (!simulated_) return;
  const double seconds = static_cast<double>(elements) / cost_.perWorkerComputeRate;
  const auto picos = static_cast<std::uint64_t>(std::llround(seconds * 1e12));
  std::lock_guard<std::mutex> g(costMu_);
  actorPicos_[actor] += picos;
}

double Fabric::simulatedElapsed() const {
  if (!simulated_) throw Error("simulatedElapsed: fabric has no cost model");
  std::lock_guard<std::mutex> g(costMu_);
  std::uint64_t worst = 0;
  for (const auto& [actor, picos] : actorPicos_) worst = std::max(worst, picos);
  return static_cast<double>(worst) * 1e-12;
}

void Fabric::closeAll() {
  master_->close();
  for (auto& w : workers_) w->close();
}

}  // namespace gridmath
