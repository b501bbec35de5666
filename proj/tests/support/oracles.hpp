// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used to check the distributed
// runtime. Everything here is deliberately written the slow, obvious way and
// shares no code with the library's execution paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "gridmath/dataload.hpp"

namespace oracles {

// Plain triple loop in double, ascending k.
inline std::vector<double> gemmSerial(const std::vector<double>& a, const std::vector<double>& b,
                                      const std::vector<double>& c, std::size_t m, std::size_t k,
                                      std::size_t n, double alpha, double beta, bool transA,
                                      bool transB) {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = beta == 0.0 ? 0.0 : beta * c[i * n + j];
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double av = transA ? a[kk * m + i] : a[i * k + kk];
        const double bv = transB ? b[j * k + kk] : b[kk * n + j];
        acc += alpha * av * bv;
      }
      out[i * n + j] = acc;
    }
  return out;
}

inline void rowColSumSerial(const std::vector<double>& a, std::size_t rows, std::size_t cols,
                            double alpha, std::vector<double>& rowAcc,
                            std::vector<double>& colAcc) {
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += a[i * cols + j];
    rowAcc[i] += alpha * s;
  }
  for (std::size_t j = 0; j < cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += a[i * cols + j];
    colAcc[j] += alpha * s;
  }
}

inline std::vector<double> softmaxRowsSerial(std::vector<double> a, std::size_t rows,
                                             std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    double m = a[i * cols];
    for (std::size_t j = 1; j < cols; ++j) m = std::max(m, a[i * cols + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(a[i * cols + j] - m);
    for (std::size_t j = 0; j < cols; ++j) a[i * cols + j] = std::exp(a[i * cols + j] - m) / s;
  }
  return a;
}

// Direct six-loop convolution forward. input: N x (C*H*W), filters:
// K x (C*R*S), output: N x (K*H'*W'), all row-major doubles.
inline std::vector<double> convForwardSerial(const std::vector<double>& input,
                                             const std::vector<double>& filters, std::size_t n,
                                             std::size_t c, std::size_t h, std::size_t w,
                                             std::size_t k, std::size_t r, std::size_t s,
                                             std::size_t stride, std::size_t pad) {
  const std::size_t oh = (h + 2 * pad - r) / stride + 1;
  const std::size_t ow = (w + 2 * pad - s) / stride + 1;
  std::vector<double> out(n * k * oh * ow, 0.0);
  for (std::size_t img = 0; img < n; ++img)
    for (std::size_t f = 0; f < k; ++f)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t ky = 0; ky < r; ++ky)
              for (std::size_t kx = 0; kx < s; ++kx) {
                const std::int64_t iy = static_cast<std::int64_t>(oy * stride + ky) -
                                        static_cast<std::int64_t>(pad);
                const std::int64_t ix = static_cast<std::int64_t>(ox * stride + kx) -
                                        static_cast<std::int64_t>(pad);
                if (iy < 0 || iy >= static_cast<std::int64_t>(h) || ix < 0 ||
                    ix >= static_cast<std::int64_t>(w))
                  continue;
                acc += input[img * c * h * w + ch * h * w + iy * w + ix] *
                       filters[f * c * r * s + ch * r * s + ky * s + kx];
              }
          out[img * k * oh * ow + f * oh * ow + oy * ow + ox] = acc;
        }
  return out;
}

// Reference float -> binary16 conversion by nearest-candidate search over all
// 65536 bit patterns, decoded with plain arithmetic (no bit tricks shared
// with the implementation). Ties pick the candidate with even mantissa.
class HalfReference {
 public:
  HalfReference() {
    for (std::uint32_t bits = 0; bits < 0x10000; ++bits) {
      const std::uint32_t sign = bits >> 15;
      const std::uint32_t exp = (bits >> 10) & 0x1F;
      const std::uint32_t man = bits & 0x3FF;
      if (exp == 31) continue;  // inf/nan are handled separately
      double v;
      if (exp == 0)
        v = std::ldexp(static_cast<double>(man), -24);
      else
        v = std::ldexp(1.0 + man / 1024.0, static_cast<int>(exp) - 15);
      if (sign) v = -v;
      finiteValues_.push_back({v, static_cast<std::uint16_t>(bits)});
    }
    std::sort(finiteValues_.begin(), finiteValues_.end());
  }

  std::uint16_t convert(float f) const {
    if (std::isnan(f)) return 0x7E00;
    if (f == 0.0f) return std::signbit(f) ? 0x8000 : 0x0000;
    const double d = f;
    // Beyond the midpoint between max finite (65504) and the next step
    // (65536) the result rounds to infinity.
    if (d >= 65520.0) return 0x7C00;
    if (d <= -65520.0) return 0xFC00;
    return bestFinite(d);
  }

 private:
  std::uint16_t bestFinite(double d) const {
    auto it = std::lower_bound(finiteValues_.begin(), finiteValues_.end(),
                               std::make_pair(d, std::uint16_t(0)));
    std::uint16_t best = 0;
    double bestErr = std::numeric_limits<double>::infinity();
    bool tie = false;
    std::uint16_t tieBits = 0;
    for (std::int64_t off = -2; off <= 2; ++off) {
      const std::int64_t idx = (it - finiteValues_.begin()) + off;
      if (idx < 0 || idx >= static_cast<std::int64_t>(finiteValues_.size())) continue;
      const double err = std::abs(finiteValues_[idx].first - d);
      if (err < bestErr) {
        bestErr = err;
        best = finiteValues_[idx].second;
        tie = false;
      } else if (err == bestErr && finiteValues_[idx].second != best) {
        tie = true;
        tieBits = finiteValues_[idx].second;
      }
    }
    if (tie) {
      // round to even mantissa
      if ((tieBits & 1u) == 0) best = tieBits;
    }
    return best;
  }

  std::vector<std::pair<double, std::uint16_t>> finiteValues_;
};

// Exhaustive tuner baseline: tries every placement combination and thread
// count against the same latency model.
inline double tunerExhaustiveOptimum(const gridmath::dataload::PipelineConfig& cfg,
                                     std::uint32_t maxThreads) {
  using gridmath::dataload::Placement;
  const std::size_t n = cfg.stages.size();
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    std::vector<Placement> placements(n);
    for (std::size_t i = 0; i < n; ++i)
      placements[i] = (mask >> i) & 1 ? Placement::Device : Placement::Host;
    for (std::uint32_t t = 1; t <= maxThreads; ++t)
      best = std::min(best, gridmath::dataload::modelLatency(cfg, t, placements));
  }
  return best;
}

// Reference data-augmentation path: single-threaded, written directly from
// the stage semantics over double-indexed planar arrays. Uses the documented
// per-(sample, stage) seed streams.
inline std::vector<float> augmentReference(const gridmath::dataload::Sample& s,
                                           const std::vector<gridmath::dataload::Stage>& stages,
                                           std::uint64_t seed) {
  using gridmath::dataload::StageKind;
  std::uint32_t C = s.channels, H = s.height, W = s.width;
  std::vector<float> v(s.bytes.size());
  // start as "raw bytes" carried in floats; values stay integral until a
  // float stage runs, matching the byte pipeline exactly
  for (std::size_t i = 0; i < s.bytes.size(); ++i) v[i] = static_cast<float>(s.bytes[i]);
  auto at = [&](std::uint32_t c, std::uint32_t y, std::uint32_t x) -> float& {
    return v[(static_cast<std::size_t>(c) * H + y) * W + x];
  };
  for (std::size_t si = 0; si < stages.size(); ++si) {
    const auto& st = stages[si];
    gridmath::SplitMix64 rng(
        gridmath::avalanche64(seed ^ (si + 1) * gridmath::kSeedSalt));
    switch (st.kind) {
      case StageKind::Decode: {
        std::vector<float> planar(v.size());
        for (std::uint32_t c = 0; c < C; ++c)
          for (std::uint32_t y = 0; y < H; ++y)
            for (std::uint32_t x = 0; x < W; ++x)
              planar[(static_cast<std::size_t>(c) * H + y) * W + x] =
                  v[(static_cast<std::size_t>(y) * W + x) * C + c];
        v = std::move(planar);
        break;
      }
      case StageKind::Crop: {
        const std::uint64_t y0 = rng.nextBelow(H - st.cropH + 1);
        const std::uint64_t x0 = rng.nextBelow(W - st.cropW + 1);
        std::vector<float> out(static_cast<std::size_t>(C) * st.cropH * st.cropW);
        for (std::uint32_t c = 0; c < C; ++c)
          for (std::uint32_t y = 0; y < st.cropH; ++y)
            for (std::uint32_t x = 0; x < st.cropW; ++x)
              out[(static_cast<std::size_t>(c) * st.cropH + y) * st.cropW + x] =
                  at(c, static_cast<std::uint32_t>(y0) + y, static_cast<std::uint32_t>(x0) + x);
        v = std::move(out);
        H = st.cropH;
        W = st.cropW;
        break;
      }
      case StageKind::Mirror: {
        if (rng.nextUnit() < 0.5) {
          for (std::uint32_t c = 0; c < C; ++c)
            for (std::uint32_t y = 0; y < H; ++y)
              for (std::uint32_t x = 0; x < W / 2; ++x)
                std::swap(at(c, y, x), at(c, y, W - 1 - x));
        }
        break;
      }
      case StageKind::MeanSubtract: {
        for (std::uint32_t c = 0; c < C; ++c)
          for (std::uint32_t y = 0; y < H; ++y)
            for (std::uint32_t x = 0; x < W; ++x) at(c, y, x) -= st.channelMean[c];
        break;
      }
      case StageKind::Scale: {
        for (float& f : v) f *= st.scale;
        break;
      }
    }
  }
  return v;
}

}  // namespace oracles
