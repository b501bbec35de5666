// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>

#include "gridmath/common.hpp"

namespace gridmath {

enum class Precision : std::uint8_t { Half = 0, Single = 1, Double = 2 };

inline std::size_t bytesOf(Precision p) {
  switch (p) {
    case Precision::Half: return 2;
    case Precision::Single: return 4;
    case Precision::Double: return 8;
  }
  throw Error("bad precision tag");
}

inline const char* precisionName(Precision p) {
  switch (p) {
    case Precision::Half: return "half";
    case Precision::Single: return "single";
    case Precision::Double: return "double";
  }
  return "?";
}

inline Precision precisionFromTag(std::uint8_t t) {
  if (t > 2) throw Error("bad precision tag");
  return static_cast<Precision>(t);
}

// IEEE 754 binary16 conversions. Storage is uint16_t; arithmetic always
// happens after upcasting (there is no half arithmetic anywhere).
//
// floatToHalf rounds to nearest, ties to even. Values beyond the binary16
// rounding boundary (>= 65520) map to +/-inf; NaN stays NaN.
inline std::uint16_t floatToHalf(float f) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  std::uint32_t mant = x & 0x007FFFFFu;
  const std::int32_t exp = static_cast<std::int32_t>((x >> 23) & 0xFFu);

  if (exp == 255) {  // inf or nan
    if (mant == 0) return static_cast<std::uint16_t>(sign | 0x7C00u);
    std::uint32_t m = mant >> 13;
    if (m == 0) m = 1;  // keep nan a nan even if payload bits vanish
    return static_cast<std::uint16_t>(sign | 0x7C00u | m);
  }

  const std::int32_t e = exp - 127 + 15;
  if (e >= 31) return static_cast<std::uint16_t>(sign | 0x7C00u);  // overflow -> inf
  if (e <= 0) {
    if (e < -10) return static_cast<std::uint16_t>(sign);  // underflows to zero
    mant |= 0x00800000u;
    const int shift = 14 - e;  // 14..24
    const std::uint32_t out = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1);
    const std::uint32_t half = 1u << (shift - 1);
    std::uint32_t r = out;
    if (rem > half || (rem == half && (out & 1u))) ++r;  // round-to-nearest-even
    return static_cast<std::uint16_t>(sign | r);         // carry lands in exponent bit correctly
  }

  const std::uint32_t out = mant >> 13;
  const std::uint32_t rem = mant & 0x1FFFu;
  std::uint16_t h = static_cast<std::uint16_t>(sign | (static_cast<std::uint32_t>(e) << 10) | out);
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;  // carry may push into inf, as intended
  return h;
}

// Exact.
inline float halfToFloat(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  std::uint32_t e = (h >> 10) & 0x1Fu;
  std::uint32_t m = h & 0x3FFu;
  std::uint32_t out;
  if (e == 0) {
    if (m == 0) {
      out = sign;
    } else {
      int shift = 0;
      while (!(m & 0x400u)) {
        m <<= 1;
        ++shift;
      }
      m &= 0x3FFu;
      out = sign | (static_cast<std::uint32_t>(112 - shift) << 23) | (m << 13);
    }
  } else if (e == 31) {
    out = sign | 0x7F800000u | (m << 13);
  } else {
    out = sign | ((e + 112) << 23) | (m << 13);
  }
  return std::bit_cast<float>(out);
}

inline std::uint16_t doubleToHalf(double d) { return floatToHalf(static_cast<float>(d)); }
inline double halfToDouble(std::uint16_t h) { return static_cast<double>(halfToFloat(h)); }

// Scalar load/store against raw storage in a given precision. T is the
// compute type (float or double).
template <typename T>
inline T loadScalar(const std::uint8_t* base, Precision p, std::size_t idx) {
  switch (p) {
    case Precision::Half: {
      std::uint16_t h;
      std::memcpy(&h, base + idx * 2, 2);
      return static_cast<T>(halfToFloat(h));
    }
    case Precision::Single: {
      float f;
      std::memcpy(&f, base + idx * 4, 4);
      return static_cast<T>(f);
    }
    case Precision::Double: {
      double d;
      std::memcpy(&d, base + idx * 8, 8);
      return static_cast<T>(d);
    }
  }
  throw Error("bad precision tag");
}

template <typename T>
inline void storeScalar(std::uint8_t* base, Precision p, std::size_t idx, T v) {
  switch (p) {
    case Precision::Half: {
      std::uint16_t h = floatToHalf(static_cast<float>(v));
      std::memcpy(base + idx * 2, &h, 2);
      return;
    }
    case Precision::Single: {
      float f = static_cast<float>(v);
      std::memcpy(base + idx * 4, &f, 4);
      return;
    }
    case Precision::Double: {
      double d = static_cast<double>(v);
      std::memcpy(base + idx * 8, &d, 8);
      return;
    }
  }
  throw Error("bad precision tag");
}

// Elementwise storage-to-storage conversion (used by reshape and casts).
void convertBuffer(const std::uint8_t* src, Precision srcPrec, std::uint8_t* dst, Precision dstPrec,
                   std::size_t count);

}  // namespace gridmath
