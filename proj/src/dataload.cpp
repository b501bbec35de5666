// SPDX-License-Identifier: Apache-2.0
#include "gridmath/dataload.hpp"

#include <algorithm>
#include <cmath>

#include "gridmath/wire.hpp"

namespace gridmath {
namespace dataload {

namespace {

void promote(Tensor& t) {
  if (t.type == BufferType::Single) return;
  t.values.resize(t.bytes.size());
  for (std::size_t i = 0; i < t.bytes.size(); ++i) t.values[i] = static_cast<float>(t.bytes[i]);
  t.bytes.clear();
  t.bytes.shrink_to_fit();
  t.type = BufferType::Single;
}

// Per-(sample, stage) random stream, independent of execution order.
SplitMix64 stageStream(std::uint64_t sampleSeed, std::size_t stageIdx) {
  return SplitMix64(avalanche64(sampleSeed ^ (stageIdx + 1) * kSeedSalt));
}

Tensor applyStage(const Stage& stage, Tensor in, std::uint64_t sampleSeed, std::size_t stageIdx) {
  if (stage.requiredType() == BufferType::Single) promote(in);
  switch (stage.kind) {
    case StageKind::Decode: {
      // interleaved HWC -> planar CHW
      Tensor out = in;
      if (in.type == BufferType::Byte) {
        for (std::uint32_t c = 0; c < in.channels; ++c)
          for (std::uint32_t y = 0; y < in.height; ++y)
            for (std::uint32_t x = 0; x < in.width; ++x)
              out.bytes[(static_cast<std::size_t>(c) * in.height + y) * in.width + x] =
                  in.bytes[(static_cast<std::size_t>(y) * in.width + x) * in.channels + c];
      }
      return out;
    }
    case StageKind::Crop: {
      if (stage.cropH > in.height || stage.cropW > in.width)
        throw Error("crop: output larger than input");
      SplitMix64 rng = stageStream(sampleSeed, stageIdx);
      const std::uint64_t y0 = rng.nextBelow(in.height - stage.cropH + 1);
      const std::uint64_t x0 = rng.nextBelow(in.width - stage.cropW + 1);
      Tensor out;
      out.channels = in.channels;
      out.height = stage.cropH;
      out.width = stage.cropW;
      out.type = in.type;
      out.bytes.resize(in.type == BufferType::Byte ? out.elements() : 0);
      out.values.resize(in.type == BufferType::Single ? out.elements() : 0);
      for (std::uint32_t c = 0; c < out.channels; ++c)
        for (std::uint32_t y = 0; y < out.height; ++y)
          for (std::uint32_t x = 0; x < out.width; ++x) {
            const std::size_t src =
                (static_cast<std::size_t>(c) * in.height + (y0 + y)) * in.width + (x0 + x);
            const std::size_t dst =
                (static_cast<std::size_t>(c) * out.height + y) * out.width + x;
            if (in.type == BufferType::Byte)
              out.bytes[dst] = in.bytes[src];
            else
              out.values[dst] = in.values[src];
          }
      return out;
    }
    case StageKind::Mirror: {
      SplitMix64 rng = stageStream(sampleSeed, stageIdx);
      if (rng.nextUnit() >= 0.5) return in;
      Tensor out = in;
      for (std::uint32_t c = 0; c < in.channels; ++c)
        for (std::uint32_t y = 0; y < in.height; ++y)
          for (std::uint32_t x = 0; x < in.width; ++x) {
            const std::size_t src =
                (static_cast<std::size_t>(c) * in.height + y) * in.width + (in.width - 1 - x);
            const std::size_t dst = (static_cast<std::size_t>(c) * in.height + y) * in.width + x;
            if (in.type == BufferType::Byte)
              out.bytes[dst] = in.bytes[src];
            else
              out.values[dst] = in.values[src];
          }
      return out;
    }
    case StageKind::MeanSubtract: {
      if (stage.channelMean.size() != in.channels)
        throw Error("meanSubtract: mean vector must have one entry per channel");
      const std::size_t plane = static_cast<std::size_t>(in.height) * in.width;
      for (std::uint32_t c = 0; c < in.channels; ++c)
        for (std::size_t i = 0; i < plane; ++i) in.values[c * plane + i] -= stage.channelMean[c];
      return in;
    }
    case StageKind::Scale: {
      for (float& v : in.values) v *= stage.scale;
      return in;
    }
  }
  throw Error("bad stage kind");
}

Tensor runOne(const PipelineConfig& cfg, const Sample& s, std::uint64_t seed) {
  Tensor t;
  t.channels = s.channels;
  t.height = s.height;
  t.width = s.width;
  t.type = BufferType::Byte;
  t.bytes = s.bytes;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) t = applyStage(cfg.stages[i], std::move(t), seed, i);
  promote(t);  // consumers take Single
  return t;
}

}  // namespace

std::vector<BufferType> stageInputTypes(const std::vector<Stage>& stages) {
  std::vector<BufferType> types;
  BufferType cur = BufferType::Byte;
  for (const Stage& s : stages) {
    if (s.requiredType() == BufferType::Single) cur = BufferType::Single;
    types.push_back(cur);
  }
  return types;
}

std::vector<Tensor> runPipeline(const PipelineConfig& cfg, const std::vector<Sample>& batch,
                                const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() != batch.size()) throw Error("runPipeline: one seed per sample required");
  std::vector<Tensor> out(batch.size());
  const std::uint32_t threads = std::max<std::uint32_t>(1, cfg.threadCount);
  if (threads == 1 || batch.size() <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) out[i] = runOne(cfg, batch[i], seeds[i]);
    return out;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex errMu;
  const std::size_t per = (batch.size() + threads - 1) / threads;
  for (std::uint32_t t = 0; t < threads; ++t) {
    const std::size_t lo = t * per;
    const std::size_t hi = std::min(batch.size(), lo + per);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) out[i] = runOne(cfg, batch[i], seeds[i]);
      } catch (...) {
        std::lock_guard<std::mutex> g(errMu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
  return out;
}

double modelLatency(const PipelineConfig& cfg, std::uint32_t threads,
                    const std::vector<Placement>& placements) {
  double host = 0.0, device = 0.0;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    if (placements[i] == Placement::Host)
      host += cfg.perStageCost[i].host;
    else
      device += cfg.perStageCost[i].device;
  }
  std::uint32_t crossings = 0;
  Placement prev = Placement::Host;  // input arrives on the host
  for (const Placement p : placements) {
    if (p != prev) ++crossings;
    prev = p;
  }
  if (prev != Placement::Host) ++crossings;  // output is consumed on the host
  return host / threads + device + crossings * cfg.transferCost +
         (threads - 1) * cfg.threadOverhead;
}

PipelineConfig tune(PipelineConfig cfg, std::uint32_t maxThreads) {
  if (cfg.perStageCost.size() != cfg.stages.size())
    throw Error("tune: per-stage costs missing");
  if (maxThreads == 0) maxThreads = 1;
  std::vector<Placement> placements(cfg.stages.size(), Placement::Host);
  std::uint32_t threads = 1;

  bool changed = true;
  while (changed) {
    changed = false;
    // thread-count coordinate, exact line search, ties to fewer threads
    {
      std::uint32_t best = threads;
      double bestL = modelLatency(cfg, threads, placements);
      for (std::uint32_t t = 1; t <= maxThreads; ++t) {
        const double l = modelLatency(cfg, t, placements);
        if (l < bestL || (l == bestL && t < best)) {
          best = t;
          bestL = l;
        }
      }
      if (best != threads) {
        threads = best;
        changed = true;
      }
    }
    // one placement coordinate at a time, ties to Host
    for (std::size_t i = 0; i < placements.size(); ++i) {
      const Placement cur = placements[i];
      double bestL = modelLatency(cfg, threads, placements);
      Placement best = cur;
      placements[i] = (cur == Placement::Host) ? Placement::Device : Placement::Host;
      const double flipped = modelLatency(cfg, threads, placements);
      if (flipped < bestL || (flipped == bestL && placements[i] == Placement::Host))
        best = placements[i];
      placements[i] = best;
      if (best != cur) changed = true;
    }
  }

  cfg.threadCount = threads;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) cfg.stages[i].placement = placements[i];
  return cfg;
}

void measureStageCosts(PipelineConfig& cfg, const std::vector<Sample>& batch,
                       const std::vector<std::uint64_t>& seeds, double deviceSpeedup) {
  cfg.perStageCost.assign(cfg.stages.size(), {});
  // Time the pipeline cumulatively one stage at a time.
  using Clock = std::chrono::steady_clock;
  double previous = 0.0;
  for (std::size_t n = 1; n <= cfg.stages.size(); ++n) {
    PipelineConfig prefix = cfg;
    prefix.stages.resize(n);
    prefix.threadCount = 1;
    const auto t0 = Clock::now();
    (void)runPipeline(prefix, batch, seeds);
    const double total = std::chrono::duration<double>(Clock::now() - t0).count();
    const double cost = std::max(1e-9, total - previous);
    cfg.perStageCost[n - 1].host = cost;
    cfg.perStageCost[n - 1].device = cost / std::max(1e-9, deviceSpeedup);
    previous = total;
  }
}

std::vector<std::uint8_t> encodeSample(const Sample& s) {
  WireWriter w;
  w.u32(s.channels);
  w.u32(s.height);
  w.u32(s.width);
  w.bytes(s.bytes.data(), s.bytes.size());
  return w.take();
}

Sample decodeSample(const std::uint8_t* data, std::size_t n) {
  WireReader r(data, n);
  Sample s;
  s.channels = r.u32();
  s.height = r.u32();
  s.width = r.u32();
  const std::size_t count = static_cast<std::size_t>(s.channels) * s.height * s.width;
  s.bytes.resize(count);
  r.bytes(s.bytes.data(), count);
  return s;
}

}  // namespace dataload
}  // namespace gridmath
