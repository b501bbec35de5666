// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "gridmath/common.hpp"

namespace gridmath {
namespace dataload {

enum class StageKind : std::uint8_t { Decode, Crop, Mirror, MeanSubtract, Scale };
enum class Placement : std::uint8_t { Host, Device };
enum class BufferType : std::uint8_t { Byte, Single };

struct Stage {
  StageKind kind = StageKind::Decode;
  Placement placement = Placement::Host;
  std::uint32_t cropH = 0, cropW = 0;  // Crop
  std::vector<float> channelMean;      // MeanSubtract, one value per channel
  float scale = 1.0f;                  // Scale

  // Decode/Crop/Mirror work on raw bytes; the float stages force promotion.
  BufferType requiredType() const {
    return (kind == StageKind::MeanSubtract || kind == StageKind::Scale) ? BufferType::Single
                                                                         : BufferType::Byte;
  }
  bool seeded() const { return kind == StageKind::Crop || kind == StageKind::Mirror; }
};

// Raw input: interleaved HWC bytes with a (C, H, W) header, as read from the
// sample file format. Decode deinterleaves to planar CHW.
struct Sample {
  std::uint32_t channels = 0, height = 0, width = 0;
  std::vector<std::uint8_t> bytes;
};

// Pipeline value between stages and at the output. Exactly one of bytes or
// values is populated, matching `type`.
struct Tensor {
  std::uint32_t channels = 0, height = 0, width = 0;
  BufferType type = BufferType::Byte;
  std::vector<std::uint8_t> bytes;
  std::vector<float> values;
  std::size_t elements() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
};

struct StageCost {
  double host = 0.0;    // seconds per batch when placed on the host
  double device = 0.0;  // seconds per batch when placed on the modeled device
};

struct PipelineConfig {
  std::vector<Stage> stages;
  std::uint32_t threadCount = 1;
  std::vector<StageCost> perStageCost;  // parallel to stages (tuning input)
  double transferCost = 0.0;            // seconds per host/device boundary crossing
  double threadOverhead = 0.0;          // seconds per thread beyond the first
};

// Runs the batch. Output is a pure function of (samples, seeds, stage list):
// thread count and placements change timing only. Seeds are per sample.
// The final output is always promoted to Single.
std::vector<Tensor> runPipeline(const PipelineConfig& cfg, const std::vector<Sample>& batch,
                                const std::vector<std::uint64_t>& seeds);

// The buffer type each stage receives under the lazy-promotion rule.
std::vector<BufferType> stageInputTypes(const std::vector<Stage>& stages);

// Modeled per-batch latency:
//   hostWork/threads + deviceWork + crossings*transferCost + (threads-1)*overhead
// where crossings counts transitions in [Host, p1..pn, Host].
double modelLatency(const PipelineConfig& cfg, std::uint32_t threads,
                    const std::vector<Placement>& placements);

// Coordinate descent from the all-Host single-thread configuration: exact
// line search per coordinate (thread count, then each stage's placement),
// repeated until a full pass changes nothing. Ties prefer fewer threads and
// Host placement.
PipelineConfig tune(PipelineConfig cfg, std::uint32_t maxThreads);

// Times each stage on the host for one batch and models the device variant
// as host/deviceSpeedup.
void measureStageCosts(PipelineConfig& cfg, const std::vector<Sample>& batch,
                       const std::vector<std::uint64_t>& seeds, double deviceSpeedup);

// Bounded producer/consumer handoff: batch k+1 is built while the consumer
// holds batch k. The producer thread stops at end-of-stream or first error;
// the error surfaces from next() after all previously completed batches.
template <typename Batch>
class PrefetchStream {
 public:
  using Producer = std::function<std::optional<Batch>()>;

  explicit PrefetchStream(Producer produce, std::size_t depth = 2)
      : depth_(depth < 2 ? 2 : depth), producer_([this, p = std::move(produce)] { run(p); }) {}

  ~PrefetchStream() {
    {
      std::lock_guard<std::mutex> g(mu_);
      stopped_ = true;
      cv_.notify_all();
    }
    if (producer_.joinable()) producer_.join();
  }

  std::optional<Batch> next() {
    std::unique_lock<std::mutex> lk(mu_);
    const auto t0 = Clock::now();
    cv_.wait(lk, [&] { return !queue_.empty() || finished_; });
    if (delivered_ > 0) consumerWait_ += std::chrono::duration<double>(Clock::now() - t0).count();
    if (!queue_.empty()) {
      Batch b = std::move(queue_.front());
      queue_.pop_front();
      ++delivered_;
      cv_.notify_all();
      return b;
    }
    if (error_) std::rethrow_exception(error_);
    return std::nullopt;
  }

  double producerIdleSeconds() const {
    std::lock_guard<std::mutex> g(mu_);
    return producerIdle_;
  }
  double consumerWaitSeconds() const {
    std::lock_guard<std::mutex> g(mu_);
    return consumerWait_;
  }

 private:
  using Clock = std::chrono::steady_clock;

  void run(const Producer& produce) {
    try {
      for (;;) {
        std::optional<Batch> b = produce();
        std::unique_lock<std::mutex> lk(mu_);
        if (!b) break;
        const auto t0 = Clock::now();
        cv_.wait(lk, [&] { return queue_.size() < depth_ || stopped_; });
        producerIdle_ += std::chrono::duration<double>(Clock::now() - t0).count();
        if (stopped_) return;
        queue_.push_back(std::move(*b));
        cv_.notify_all();
      }
    } catch (...) {
      std::lock_guard<std::mutex> g(mu_);
      error_ = std::current_exception();
    }
    std::lock_guard<std::mutex> g(mu_);
    finished_ = true;
    cv_.notify_all();
  }

  std::size_t depth_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Batch> queue_;
  bool finished_ = false;
  bool stopped_ = false;
  std::exception_ptr error_;
  std::uint64_t delivered_ = 0;
  double producerIdle_ = 0.0;
  double consumerWait_ = 0.0;
  std::thread producer_;
};

// Sample file format: u32 C, u32 H, u32 W, then C*H*W interleaved bytes.
std::vector<std::uint8_t> encodeSample(const Sample& s);
Sample decodeSample(const std::uint8_t* data, std::size_t n);

}  // namespace dataload
}  // namespace gridmath
