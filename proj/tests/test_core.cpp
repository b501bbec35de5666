// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "gridmath/descriptor.hpp"
#include "gridmath/layout.hpp"
#include "support/oracles.hpp"

using namespace gridmath;

namespace {
std::vector<WorkerId> group(std::uint32_t n) { return makeWorkerGroup(n); }

// Brute-force cover check: every element owned by exactly one tile.
void checkExactCover(std::uint64_t rows, std::uint64_t cols, const Layout& l) {
  for (std::uint64_t i = 0; i < rows; ++i)
    for (std::uint64_t j = 0; j < cols; ++j) {
      int owners = 0;
      for (const auto& [e, w] : l.tiles)
        if (e.contains(i, j)) ++owners;
      REQUIRE(owners == 1);
    }
}
}  // namespace

TEST_CASE("row-block layout splits evenly and covers") {
  const Layout l = makeRowBlockLayout(4, 4, group(2));
  REQUIRE(l.tiles.size() == 2);
  CHECK(l.tiles[0].first == TileExtent{0, 2, 0, 4});
  CHECK(l.tiles[0].second.rank == 0);
  CHECK(l.tiles[1].first == TileExtent{2, 2, 0, 4});
  CHECK(l.tiles[1].second.rank == 1);

  const Layout odd = makeRowBlockLayout(5, 3, group(2));
  CHECK(odd.tiles[0].first.rowCount == 3);  // remainder goes to earliest workers
  CHECK(odd.tiles[1].first.rowCount == 2);

  const Layout one = makeRowBlockLayout(1, 7, group(1));
  REQUIRE(one.tiles.size() == 1);
  CHECK(one.tiles[0].first == TileExtent{0, 1, 0, 7});
  CHECK(one.tiles[0].second.rank == 0);

  CHECK_THROWS_AS(makeRowBlockLayout(4, 4, {}), Error);
}

TEST_CASE("grid layout shapes") {
  const Layout g22 = makeGridLayout(4, 4, 2, 2, group(4));
  REQUIRE(g22.tiles.size() == 4);
  for (const auto& [e, w] : g22.tiles) {
    CHECK(e.rowCount == 2);
    CHECK(e.colCount == 2);
  }
  checkExactCover(4, 4, g22);

  const Layout cols3 = makeGridLayout(3, 3, 1, 3, group(3));
  REQUIRE(cols3.tiles.size() == 3);
  for (const auto& [e, w] : cols3.tiles) CHECK(e.colCount == 1);

  // 5x5 over a 2x2 grid: panel sizes {3,2} in both dimensions
  const Layout g55 = makeGridLayout(5, 5, 2, 2, group(4));
  checkExactCover(5, 5, g55);
  for (const auto& [e, w] : g55.tiles) {
    CHECK((e.rowCount == 3 || e.rowCount == 2));
    CHECK((e.colCount == 3 || e.colCount == 2));
  }

  CHECK_THROWS_AS(makeGridLayout(4, 4, 2, 2, group(3)), Error);
}

TEST_CASE("validateLayout reports the first violation") {
  CHECK(validateLayout(3, 3, makeSingleTileLayout(3, 3, {0})).ok());

  Layout overlap;
  overlap.tiles.push_back({TileExtent{0, 1, 0, 3}, WorkerId{0}});
  overlap.tiles.push_back({TileExtent{0, 2, 0, 3}, WorkerId{1}});
  CHECK(validateLayout(2, 3, overlap).kind == LayoutViolation::Overlap);

  // covers rows 0..2 of a 4-row matrix: brute-force bitmap confirms the gap
  Layout gap;
  gap.tiles.push_back({TileExtent{0, 2, 0, 3}, WorkerId{0}});
  std::vector<bool> covered(4 * 3, false);
  for (const auto& [e, w] : gap.tiles)
    for (std::uint64_t i = e.rowStart; i < e.rowEnd(); ++i)
      for (std::uint64_t j = e.colStart; j < e.colEnd(); ++j) covered[i * 3 + j] = true;
  CHECK(std::count(covered.begin(), covered.end(), false) > 0);
  CHECK(validateLayout(4, 3, gap).kind == LayoutViolation::Gap);

  Layout oob;
  oob.tiles.push_back({TileExtent{0, 5, 0, 3}, WorkerId{0}});
  CHECK(validateLayout(4, 3, oob).kind == LayoutViolation::OutOfRange);

  Layout badWorker = makeSingleTileLayout(2, 2, {7});
  CHECK(validateLayout(2, 2, badWorker, 4).kind == LayoutViolation::UnknownWorker);
  CHECK(validateLayout(2, 2, badWorker).ok());  // membership check skipped
}

TEST_CASE("tileOwner matches a full scan") {
  const Layout rb = makeRowBlockLayout(4, 4, group(2));
  CHECK(tileOwner(rb, 0, 3).rank == 0);
  CHECK(tileOwner(rb, 3, 0).rank == 1);

  const Layout g = makeGridLayout(5, 5, 2, 2, group(4));
  for (std::uint64_t i = 0; i < 5; ++i)
    for (std::uint64_t j = 0; j < 5; ++j) {
      std::uint32_t scanned = 0xFFFF;
      for (const auto& [e, w] : g.tiles)
        if (e.contains(i, j)) scanned = w.rank;
      CHECK(tileOwner(g, i, j).rank == scanned);
    }
  CHECK_THROWS_AS(tileOwner(g, 5, 0), Error);
}

TEST_CASE("every generated layout covers each index exactly once") {
  for (std::uint32_t p = 1; p <= 8; ++p) {
    for (std::uint64_t rows = 1; rows <= 16; rows += 3) {
      for (std::uint64_t cols = 1; cols <= 16; cols += 5) {
        checkExactCover(rows, cols, makeRowBlockLayout(rows, cols, group(p)));
        checkExactCover(rows, cols, makeColBlockLayout(rows, cols, group(p)));
        if (p == 4) checkExactCover(rows, cols, makeGridLayout(rows, cols, 2, 2, group(4)));
        if (p == 8) checkExactCover(rows, cols, makeGridLayout(rows, cols, 2, 4, group(8)));
      }
    }
  }
}

TEST_CASE("descriptor wire encoding round-trips bit-exactly") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    MatrixDescriptor d;
    d.matrixId = rng();
    d.rows = 1 + rng() % 40;
    d.cols = 1 + rng() % 40;
    d.precision = static_cast<Precision>(rng() % 3);
    d.version = rng() % 1000;
    const std::uint32_t p = 1 + rng() % 6;
    d.layout = makeRowBlockLayout(d.rows, d.cols, group(p));

    WireWriter w;
    encodeDescriptor(d, w);
    const auto bytes1 = w.view();
    WireReader r(bytes1.data(), bytes1.size());
    const MatrixDescriptor back = decodeDescriptor(r);
    WireWriter w2;
    encodeDescriptor(back, w2);
    REQUIRE(bytes1 == w2.view());
    CHECK(back.matrixId == d.matrixId);
    CHECK(back.layout == d.layout);
    CHECK(back.version == d.version);
  }
}

TEST_CASE("half conversion against the reference oracle") {
  static const oracles::HalfReference ref;

  CHECK(floatToHalf(1.0f) == ref.convert(1.0f));
  CHECK(halfToFloat(floatToHalf(1.0f)) == 1.0f);
  CHECK(floatToHalf(65520.0f) == 0x7C00);  // overflow -> +inf (binary16 max is 65504)
  CHECK(floatToHalf(-65520.0f) == 0xFC00);
  CHECK(halfToFloat(floatToHalf(65504.0f)) == 65504.0f);
  CHECK(std::isnan(halfToFloat(floatToHalf(std::nanf("")))));
  CHECK(std::isinf(halfToFloat(floatToHalf(1e30f))));

  std::mt19937_64 rng(13);
  std::uniform_real_distribution<float> wide(-70000.0f, 70000.0f);
  std::uniform_real_distribution<float> narrow(-2.0f, 2.0f);
  std::uniform_real_distribution<float> tiny(-1e-4f, 1e-4f);
  int checked = 0;
  for (int i = 0; i < 10000; ++i) {
    float f;
    switch (i % 3) {
      case 0: f = wide(rng); break;
      case 1: f = narrow(rng); break;
      default: f = tiny(rng); break;
    }
    const std::uint16_t got = floatToHalf(f);
    const std::uint16_t want = ref.convert(f);
    if (got != want) {
      CAPTURE(f);
      CAPTURE(got);
      CAPTURE(want);
    }
    REQUIRE(got == want);
    ++checked;
  }
  CHECK(checked == 10000);
}

TEST_CASE("half round-trip error and idempotence") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<float> normals(-60000.0f, 60000.0f);
  for (int i = 0; i < 10000; ++i) {
    float f = normals(rng);
    if (std::abs(f) < 6.2e-5f) continue;  // stay in the normal half range
    const float back = halfToFloat(floatToHalf(f));
    CHECK(std::abs(back - f) <= std::ldexp(std::abs(f), -11));  // <= 2^-11 relative

    // upcast then downcast is the identity on representable values
    const std::uint16_t h = floatToHalf(f);
    CHECK(floatToHalf(halfToFloat(h)) == h);
  }
}

TEST_CASE("storage conversions preserve single and double bit patterns") {
  std::mt19937_64 rng(3);
  std::vector<float> fs(256);
  for (auto& f : fs) f = std::bit_cast<float>(static_cast<std::uint32_t>(rng() & 0x7F7FFFFF));
  std::vector<std::uint8_t> buf(fs.size() * 4);
  convertBuffer(reinterpret_cast<const std::uint8_t*>(fs.data()), Precision::Single, buf.data(),
                Precision::Single, fs.size());
  CHECK(std::memcmp(buf.data(), fs.data(), buf.size()) == 0);
}
