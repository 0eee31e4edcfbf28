#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "samfed/error.hpp"
#include "samfed/metrics.hpp"

using namespace samfed;

namespace {

Mask random_mask(std::mt19937_64& rng, std::size_t h, std::size_t w) {
  // Blocky masks have long boundaries; a few random rectangles plus noise.
  Mask m(h, w);
  std::uniform_int_distribution<std::size_t> uy(0, h - 1), ux(0, w - 1);
  const int rects = static_cast<int>(rng() % 3);
  for (int r = 0; r < rects; ++r) {
    std::size_t y0 = uy(rng), y1 = uy(rng), x0 = ux(rng), x1 = ux(rng);
    if (y0 > y1) std::swap(y0, y1);
    if (x0 > x1) std::swap(x0, x1);
    for (std::size_t y = y0; y <= y1; ++y)
      for (std::size_t x = x0; x <= x1; ++x) m.at(y, x) = 1;
  }
  const std::size_t flips = rng() % 12;
  for (std::size_t i = 0; i < flips; ++i) m.labels[rng() % m.size()] ^= 1;
  return m;
}

Mask shifted(const Mask& m, long dy, long dx) {
  Mask out(m.height, m.width);
  for (long y = 0; y < static_cast<long>(m.height); ++y)
    for (long x = 0; x < static_cast<long>(m.width); ++x) {
      const long sy = y - dy, sx = x - dx;
      if (sy >= 0 && sx >= 0 && sy < static_cast<long>(m.height) && sx < static_cast<long>(m.width))
        out.at(y, x) = m.at(sy, sx);
    }
  return out;
}

}  // namespace

TEST_CASE("dice examples") {
  Mask a(4, 4), b(4, 4);
  for (std::size_t i = 0; i < 4; ++i) a.labels[i] = 1;
  CHECK(dice(a, a) == 1.0);
  for (std::size_t i = 8; i < 12; ++i) b.labels[i] = 1;
  CHECK(dice(a, b) == 0.0);
  Mask c(4, 4);
  c.labels[2] = c.labels[3] = c.labels[4] = c.labels[5] = 1;
  CHECK(dice(a, c) == 0.5);
  CHECK(dice(Mask(4, 4), Mask(4, 4)) == 1.0);
  CHECK(dice(a, Mask(4, 4)) == 0.0);
  CHECK_THROWS_AS(dice(a, Mask(2, 8)), Error);
}

TEST_CASE("hd95 examples") {
  Mask a(8, 8), b(8, 8);
  a.at(1, 1) = 1;
  b.at(4, 5) = 1;
  CHECK(hd95(a, a) == 0.0);
  CHECK(hd95(a, b) == 5.0);
  CHECK(hd95(Mask(8, 8), Mask(8, 8)) == 0.0);
  CHECK(hd95(a, Mask(8, 8)) == std::sqrt(128.0));
  CHECK_THROWS_AS(hd95(a, Mask(4, 16)), Error);
}

TEST_CASE("boundary marks pixels next to background or the border") {
  Mask m(5, 5, 1);
  const auto b = boundary(m, 1);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x) CHECK(b[y * 5 + x] == (y == 0 || x == 0 || y == 4 || x == 4));
}

TEST_CASE("dice and hd95 match brute-force oracles") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Mask a = random_mask(rng, 16, 16), b = random_mask(rng, 16, 16);
    CHECK(dice(a, b) == oracle::dice(a, b, 1));
    CHECK(std::abs(hd95(a, b) - oracle::hd95(a, b, 1)) <= 1e-9);
  }
}

TEST_CASE("metric symmetry") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const Mask a = random_mask(rng, 16, 16), b = random_mask(rng, 16, 16);
    CHECK(dice(a, b) == dice(b, a));
    CHECK(hd95(a, b) == hd95(b, a));
  }
}

TEST_CASE("hd95 is translation invariant away from the edges") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    // Shapes live in the middle of a 32x32 canvas so a shift never clips.
    Mask a(32, 32), b(32, 32);
    const Mask sa = random_mask(rng, 12, 12), sb = random_mask(rng, 12, 12);
    for (std::size_t y = 0; y < 12; ++y)
      for (std::size_t x = 0; x < 12; ++x) {
        a.at(y + 10, x + 10) = sa.at(y, x);
        b.at(y + 10, x + 10) = sb.at(y, x);
      }
    const long dy = static_cast<long>(rng() % 17) - 8, dx = static_cast<long>(rng() % 17) - 8;
    CHECK(hd95(shifted(a, dy, dx), shifted(b, dy, dx)) == hd95(a, b));
  }
}

TEST_CASE("removing overlap lowers dice") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    Mask a = random_mask(rng, 16, 16);
    const Mask b = random_mask(rng, 16, 16);
    std::vector<std::size_t> overlap;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a.labels[i] == 1 && b.labels[i] == 1) overlap.push_back(i);
    if (overlap.empty()) continue;
    const double before = dice(a, b);
    a.labels[overlap[rng() % overlap.size()]] = 0;
    CHECK(dice(a, b) < before);
  }
}

TEST_CASE("evaluate averages the foreground classes") {
  Mask gt(4, 4), pred(4, 4);
  gt.labels[0] = 1;
  gt.labels[15] = 2;
  pred.labels[0] = 1;
  const auto r = evaluate(pred, gt, 3);
  CHECK(r.dice == 0.5);
  CHECK(r.hd95 == doctest::Approx(std::sqrt(32.0) / 2.0));
  const auto same = evaluate(gt, gt, 3);
  CHECK(same.dice == 1.0);
  CHECK(same.hd95 == 0.0);
}
