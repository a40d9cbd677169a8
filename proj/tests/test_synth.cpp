#include <gtest/gtest.h>

#include <cmath>

#include "m3v/synth.hpp"

using namespace m3v;
using namespace m3v::synth;

TEST(Texture, ZeroVelocityRepeatsFrame) {
  const auto [seq, gt] = gen_translating_texture(24, 20, {0, 0}, 5, 1);
  ASSERT_EQ(seq.size(), 5u);
  ASSERT_EQ(gt.flows.size(), 4u);
  for (std::size_t k = 1; k < seq.size(); ++k) EXPECT_EQ(seq[k].data(), seq[0].data());
}

TEST(Texture, IntegerShiftWraps) {
  const auto [seq, gt] = gen_translating_texture(16, 12, {2, -1}, 3, 2);
  for (int k = 1; k < 3; ++k)
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 16; ++x)
        EXPECT_DOUBLE_EQ(seq[k].at(x, y), seq[0].at(((x - 2 * k) % 16 + 16) % 16, ((y + k) % 12 + 12) % 12));
}

TEST(Texture, FractionalShiftIsBilinear) {
  const Velocity v{1.5, -0.5};
  const auto [seq, gt] = gen_translating_texture(16, 16, v, 3, 3);
  const Frame& f0 = seq[0];
  auto px = [&](int x, int y) { return f0.at(((x % 16) + 16) % 16, ((y % 16) + 16) % 16); };
  for (int k = 1; k < 3; ++k)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const double sx = x - k * v.u, sy = y - k * v.v;
        const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
        const double a = sx - x0, b = sy - y0;
        const double want = (1 - a) * (1 - b) * px(x0, y0) + a * (1 - b) * px(x0 + 1, y0) +
                            (1 - a) * b * px(x0, y0 + 1) + a * b * px(x0 + 1, y0 + 1);
        EXPECT_NEAR(seq[k].at(x, y), want, 1e-6);
      }
  EXPECT_EQ(gt.flows[0].u(3, 3), 1.5);
  EXPECT_EQ(gt.flows[1].v(7, 2), -0.5);
}

TEST(Texture, Statistics) {
  const auto [seq, gt] = gen_translating_texture(64, 64, {0, 0}, 1, 4);
  double m = 0, s = 0;
  for (double x : seq[0].data()) m += x;
  m /= 4096;
  for (double x : seq[0].data()) s += (x - m) * (x - m);
  EXPECT_NEAR(m, 128.0, 1e-6);
  EXPECT_NEAR(std::sqrt(s / 4096), 35.0, 1e-6);
}

TEST(Disk, ZeroRadiusHasNoMotion) {
  const auto [seq, gt] = gen_moving_disk(32, 32, 0.0, {3, 0}, 4, 5);
  for (const auto& f : gt.flows)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) ASSERT_EQ(f.u(x, y), 0.0);
  EXPECT_EQ(seq[1].data(), seq[0].data());
}

TEST(Disk, FlowInsideDiskEqualsVelocity) {
  const auto [seq, gt] = gen_moving_disk(48, 48, 8, {3, 0}, 4, 6);
  const DiskScene scene{{23.5, 23.5}, 8, {3, 0}};
  for (int k = 0; k < 3; ++k) {
    const Point c = scene.center(k);
    EXPECT_EQ(gt.flows[k].u(static_cast<int>(c.x), static_cast<int>(c.y)), 3.0);
    EXPECT_EQ(gt.flows[k].v(static_cast<int>(c.x), static_cast<int>(c.y)), 0.0);
    EXPECT_EQ(gt.flows[k].u(2, 2), 0.0);
  }
  EXPECT_EQ(gt.label, 0);
}

TEST(Disk, DatasetIsBalancedAndDeterministic) {
  DiskDatasetParams p;
  p.frames = 3;
  const auto a = make_disk_dataset(p, 9);
  ASSERT_EQ(a.size(), 256u);
  int counts[4] = {0, 0, 0, 0};
  for (const auto& c : a) {
    ++counts[c.truth.label];
    EXPECT_EQ(std::hypot(c.truth.velocity.u, c.truth.velocity.v), 3.0);
  }
  for (int c : counts) EXPECT_EQ(c, 64);
  p.clips = 4;
  const auto b = make_disk_dataset(p, 9);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(b[i].video[2].data(), a[i].video[2].data());
}

TEST(Disk, DirectionClasses) {
  EXPECT_EQ(direction_class({2, 1}), 0);
  EXPECT_EQ(direction_class({-2, 1}), 1);
  EXPECT_EQ(direction_class({0.5, 3}), 2);
  EXPECT_EQ(direction_class({0.5, -3}), 3);
}

TEST(Writers, QuantizeRoundsAndClamps) {
  EXPECT_EQ(quantize(-4.0), 0);
  EXPECT_EQ(quantize(300.0), 255);
  EXPECT_EQ(quantize(127.5), 128);
  EXPECT_EQ(quantize(127.49), 127);
}
