#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "m3v/flow.hpp"
#include "m3v/synth.hpp"
#include "m3v/trajectories.hpp"

using namespace m3v;

namespace {

std::vector<FlowField> constant_flows(int w, int h, double u, double v, int n) {
  return std::vector<FlowField>(n, FlowField(w, h, u, v));
}

}  // namespace

TEST(SeedPoints, FourCenters) {
  const auto s = seed_points({0, 0}, 16, 16, 4);
  const std::vector<Point> want{{4, 4}, {12, 4}, {4, 12}, {12, 12}};
  EXPECT_EQ(s, want);
}

TEST(SeedPoints, SingleCenter) {
  const auto s = seed_points({16, 32}, 16, 16, 1);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0], (Point{24, 40}));
}

TEST(SeedPoints, NonSquareKRejected) {
  EXPECT_THROW(seed_points({0, 0}, 16, 16, 3), InvalidArgument);
  EXPECT_THROW(seed_points({0, 0}, 16, 16, 0), InvalidArgument);
}

TEST(Track, ZeroFlow) {
  const auto flows = constant_flows(32, 32, 0, 0, 6);
  const auto t = track_trajectory({8, 8}, flows);
  ASSERT_EQ(t.points.size(), 7u);
  EXPECT_TRUE(t.valid);
  for (const auto& p : t.points) EXPECT_EQ(p, (Point{8, 8}));
}

TEST(Track, ConstantFlowIsExact) {
  const auto flows = constant_flows(32, 32, 1.5, -0.5, 3);
  const auto t = track_trajectory({8, 8}, flows);
  const std::vector<Point> want{{8, 8}, {9.5, 7.5}, {11, 7}, {12.5, 6.5}};
  EXPECT_EQ(t.points, want);
  EXPECT_TRUE(t.valid);
}

TEST(Track, ExitMarksInvalid) {
  const auto flows = constant_flows(16, 16, 2, 0, 4);
  const auto t = track_trajectory({15, 8}, flows);
  EXPECT_FALSE(t.valid);
  for (const auto& p : t.points) EXPECT_EQ(p, (Point{15, 8}));
}

TEST(Track, Errors) {
  EXPECT_THROW(track_trajectory({4, 4}, std::span<const FlowField>{}), InvalidArgument);
  const auto flows = constant_flows(16, 16, 0, 0, 2);
  EXPECT_THROW(track_trajectory({0, 4}, flows), InvalidArgument);
  std::vector<FlowField> mixed{FlowField(16, 16), FlowField(8, 8)};
  EXPECT_THROW(track_trajectory({4, 4}, mixed), InvalidArgument);
}

TEST(Track, ValidIffStrictlyInterior) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> pos(0.5, 23.5), vel(-3.0, 3.0);
  for (int i = 0; i < 200; ++i) {
    const double u = vel(rng), v = vel(rng);
    const Point seed{pos(rng), pos(rng)};
    const auto t = track_trajectory(seed, constant_flows(24, 24, u, v, 6));
    bool inside = true;
    for (const auto& p : synth::analytic_trajectory(seed, {u, v}, 6))
      inside = inside && strictly_inside(p, 24, 24);
    EXPECT_EQ(t.valid, inside);
    if (inside) {
      for (int k = 0; k < 6; ++k) {
        EXPECT_NEAR(t.points[k + 1].x - t.points[k].x, u, 1e-12);
        EXPECT_NEAR(t.points[k + 1].y - t.points[k].y, v, 1e-12);
      }
    }
  }
}

TEST(Track, TranslationEquivariant) {
  const auto flows = constant_flows(64, 64, 1.25, 0.75, 5);
  const auto a = track_trajectory({10, 12}, flows);
  const auto b = track_trajectory({13, 9}, flows);
  for (std::size_t k = 0; k < a.points.size(); ++k) {
    EXPECT_NEAR(b.points[k].x - a.points[k].x, 3.0, 1e-12);
    EXPECT_NEAR(b.points[k].y - a.points[k].y, -3.0, 1e-12);
  }
}

TEST(Track, RigidTranslationVideo) {
  const synth::Velocity vel{1.5, -1.0};
  const auto [seq, gt] = synth::gen_translating_texture(64, 64, vel, 7, 31);
  std::vector<FlowField> flows;
  for (int k = 0; k < 6; ++k) flows.push_back(median_filter_flow(compute_dense_flow(seq[k], seq[k + 1])));
  double err = 0.0;
  int n = 0;
  for (const auto& seed : seed_points({16, 24}, 16, 16, 16)) {
    const auto t = track_trajectory(seed, flows);
    ASSERT_TRUE(t.valid);
    const auto want = synth::analytic_trajectory(seed, vel, 6);
    for (int k = 0; k < 6; ++k) {
      err += std::hypot(t.points[k + 1].x - t.points[k].x - (want[k + 1].x - want[k].x),
                        t.points[k + 1].y - t.points[k].y - (want[k + 1].y - want[k].y));
      ++n;
    }
  }
  EXPECT_LT(err / n, 0.3);
}

TEST(M3tp, EmptyPack) {
  TrajectoryPack p{32, 32, 6, 2, {}};
  EXPECT_EQ(decode_m3tp(encode_m3tp(p)), p);
}

TEST(M3tp, FlagsPreserved) {
  TrajectoryPack p{32, 32, 1, 1, {}};
  p.trajectories.push_back({0, {{{1, 2}, {3, 4}}, true}});
  p.trajectories.push_back({4, {{{5, 6}, {5, 6}}, false}});
  const auto back = decode_m3tp(encode_m3tp(p));
  EXPECT_EQ(back, p);
  EXPECT_TRUE(back.trajectories[0].trajectory.valid);
  EXPECT_FALSE(back.trajectories[1].trajectory.valid);
}

TEST(M3tp, RandomRoundTripBitExact) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<float> u(-100.0f, 300.0f);
  TrajectoryPack p{224, 224, 6, 2, {}};
  for (int i = 0; i < 1000; ++i) {
    AnchoredTrajectory at;
    at.anchor_frame = static_cast<std::uint32_t>(rng() % 64);
    at.trajectory.valid = rng() % 2;
    for (int k = 0; k <= 6; ++k) at.trajectory.points.push_back({u(rng), u(rng)});
    p.trajectories.push_back(at);
  }
  const auto bytes = encode_m3tp(p);
  EXPECT_EQ(decode_m3tp(bytes), p);
  EXPECT_EQ(encode_m3tp(decode_m3tp(bytes)), bytes);
}

TEST(M3tp, CorruptInputs) {
  TrajectoryPack p{8, 8, 1, 1, {}};
  p.trajectories.push_back({0, {{{1, 2}, {3, 4}}, true}});
  auto b = encode_m3tp(p);
  auto trunc = b;
  trunc.pop_back();
  EXPECT_THROW(decode_m3tp(trunc), FormatError);
  auto flag = b;
  flag[4 + 2 + 4 + 4 + 2 + 2 + 4 + 4] = 7;
  EXPECT_THROW(decode_m3tp(flag), FormatError);
  auto ver = b;
  ver[4] = 9;
  EXPECT_THROW(decode_m3tp(ver), FormatError);
}
