#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "m3v/synth.hpp"
#include "m3v/targets.hpp"

using namespace m3v;

namespace {

std::vector<const Frame*> frame_ptrs(const std::vector<Frame>& frames) {
  std::vector<const Frame*> out;
  for (const auto& f : frames) out.push_back(&f);
  return out;
}

void expect_standardized(std::span<const double> v, std::span<const std::uint8_t> inc) {
  double s = 0.0, ss = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (inc[i]) {
      s += v[i];
      ss += v[i] * v[i];
      ++n;
    }
  const double mean = s / n;
  EXPECT_LT(std::abs(mean), 1e-5);
  EXPECT_LT(std::abs(std::sqrt(ss / n - mean * mean) - 1.0), 1e-4);
}

}  // namespace

TEST(PatchGrid, PaperDefaults) {
  const auto g = build_patch_grid(16, 224, 224, 2, 16, 16);
  EXPECT_EQ(g.grid_t(), 8);
  EXPECT_EQ(g.grid_h(), 14);
  EXPECT_EQ(g.grid_w(), 14);
  EXPECT_EQ(g.size(), 1568u);
  EXPECT_EQ(build_patch_grid(16, 32, 32, 2, 16, 16).size(), 32u);
  EXPECT_THROW(build_patch_grid(15, 32, 32, 2, 16, 16), InvalidArgument);
}

TEST(PatchGrid, IndexCoordBijection) {
  const auto g = build_patch_grid(16, 48, 32, 2, 16, 16);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g.index(g.coord(i)), i);
  // x fastest, then y, then t.
  EXPECT_EQ(g.coord(1).x, 1);
  EXPECT_EQ(g.coord(2).y, 1);
  EXPECT_EQ(g.coord(6).t, 1);
  EXPECT_EQ(g.origin(6 + 3), (Point{16, 16}));
}

TEST(Mask, TubePaperDefault) {
  const auto g = build_patch_grid(16, 224, 224, 2, 16, 16);
  const auto m = generate_mask(g, MaskType::kTube, 0.7, 42);
  EXPECT_EQ(m.count(), 1096u);
  for (std::size_t s = 0; s < g.spatial_size(); ++s)
    for (int t = 1; t < g.grid_t(); ++t)
      EXPECT_EQ(m.masked[t * g.spatial_size() + s], m.masked[s]);
  std::size_t first = 0;
  for (std::size_t s = 0; s < g.spatial_size(); ++s) first += m.masked[s];
  EXPECT_EQ(first, 137u);
}

TEST(Mask, CountsFollowRounding) {
  const auto g = build_patch_grid(16, 224, 224, 2, 16, 16);
  for (double r : {0.4, 0.7, 0.9}) {
    const auto tube = generate_mask(g, MaskType::kTube, r, 1);
    EXPECT_EQ(tube.count(), 8 * static_cast<std::size_t>(std::lround(r * 196)));
    const auto cube = generate_mask(g, MaskType::kCube, r, 1);
    EXPECT_EQ(cube.count(), static_cast<std::size_t>(std::lround(r * 1568)));
  }
  EXPECT_EQ(masked_cell_count(0.5, 5), 3u);
}

TEST(Mask, Deterministic) {
  const auto g = build_patch_grid(16, 64, 64, 2, 16, 16);
  EXPECT_EQ(generate_mask(g, MaskType::kTube, 0.5, 9).masked,
            generate_mask(g, MaskType::kTube, 0.5, 9).masked);
  EXPECT_NE(generate_mask(g, MaskType::kTube, 0.5, 9).masked,
            generate_mask(g, MaskType::kTube, 0.5, 10).masked);
}

TEST(Mask, CubeSmallGrid) {
  const auto g = build_patch_grid(16, 32, 32, 2, 16, 16);
  int differing = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = generate_mask(g, MaskType::kCube, 0.4, seed);
    EXPECT_EQ(m.count(), 13u);
    std::set<std::vector<std::uint8_t>> slices;
    for (int t = 0; t < 8; ++t)
      slices.insert(std::vector<std::uint8_t>(m.masked.begin() + 4 * t, m.masked.begin() + 4 * t + 4));
    differing += slices.size() > 1;
  }
  EXPECT_GT(differing, 15);
}

TEST(Mask, DegenerateRatios) {
  const auto g = build_patch_grid(16, 32, 32, 2, 16, 16);
  EXPECT_THROW(generate_mask(g, MaskType::kTube, 0.1, 0), InvalidArgument);
  EXPECT_THROW(generate_mask(g, MaskType::kTube, 0.9, 0), InvalidArgument);
  EXPECT_THROW(generate_mask(g, MaskType::kTube, 0.0, 0), InvalidArgument);
  EXPECT_THROW(generate_mask(g, MaskType::kTube, 1.0, 0), InvalidArgument);
}

TEST(Sampling, Examples) {
  auto p = plan_sampling(40, 2, true);
  ASSERT_EQ(p.input_indices.size(), 16u);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(p.input_indices[i], 2 * i);
  EXPECT_EQ(p.s_flow, 1);
  EXPECT_EQ(p.anchors, (std::vector<int>{0, 4, 8, 12, 16, 20, 24, 28}));
  EXPECT_EQ(plan_sampling(40, 2, false).s_flow, 2);
  p = plan_sampling(16, 1, true);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(p.input_indices[i], i);
  EXPECT_EQ(p.s_flow, 1);
  EXPECT_THROW(plan_sampling(31, 2, false), InvalidArgument);
  p = plan_sampling(40, 2, false, 3);
  EXPECT_EQ(p.input_indices.front(), 3);
  EXPECT_EQ(p.input_indices.back(), 33);
}

TEST(TargetDims, PerKind) {
  const PatchShape s{2, 16, 16};
  TargetConfig c;
  c.kind = TargetKind::kTrajectory;
  EXPECT_EQ(target_dim(c, s, 1), 264u);
  c.kind = TargetKind::kTrajectoryNoShape;
  EXPECT_EQ(target_dim(c, s, 1), 36u + 48u);
  c.kind = TargetKind::kPixel;
  EXPECT_EQ(target_dim(c, s, 3), 1536u);
  c.kind = TargetKind::kHog;
  EXPECT_EQ(target_dim(c, s, 1), 36u);
  c.kind = TargetKind::kHogHof;
  EXPECT_EQ(target_dim(c, s, 1), 72u);
  c.kind = TargetKind::kHogMbh;
  EXPECT_EQ(target_dim(c, s, 1), 108u);
  c.kind = TargetKind::kHogFlow;
  EXPECT_EQ(target_dim(c, s, 1), 36u + 512u);
  for (int i = 0; i <= 6; ++i) {
    const auto k = static_cast<TargetKind>(i);
    EXPECT_EQ(parse_target_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_target_kind("optical"), InvalidArgument);
}

TEST(Normalize, StandardScoreArithmetic) {
  std::vector<double> v{1, 2, 3, 4};
  patch_normalize(v);
  const std::vector<double> want{-1.3416, -0.4472, 0.4472, 1.3416};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(v[i], want[i], 1e-4);
}

TEST(Normalize, DegenerateOnlyCentered) {
  std::vector<double> v{5, 5, 5};
  patch_normalize(v);
  for (double x : v) EXPECT_EQ(x, 0.0);
  std::vector<double> w{1, 1 + 1e-8};
  patch_normalize(w);
  EXPECT_NEAR(w[0], -0.5e-8, 1e-15);
}

TEST(Normalize, ExcludedBecomeZero) {
  std::vector<double> v{1, 100, 3};
  const std::vector<std::uint8_t> inc{1, 0, 1};
  patch_normalize(v, inc);
  EXPECT_EQ(v[1], 0.0);
  EXPECT_NEAR(v[0], -1.0, 1e-12);
  EXPECT_NEAR(v[2], 1.0, 1e-12);
}

TEST(MotionTarget, StaticVideo) {
  const auto [seq, gt] = synth::gen_translating_texture(32, 32, {0, 0}, 7, 2);
  std::vector<Trajectory> trajs;
  for (const auto& s : seed_points({0, 0}, 16, 16, 4)) trajs.push_back({std::vector<Point>(7, s), true});
  const auto frames = frame_ptrs(seq.frames());
  const auto m = assemble_motion_target(trajs, frames);
  EXPECT_EQ(m.z_p.size(), 48u);
  EXPECT_EQ(m.z_s.size(), 216u);
  for (double x : m.z_p) EXPECT_EQ(x, 0.0);
  for (int k = 0; k < 4; ++k)
    for (int i = 1; i < 6; ++i)
      for (int b = 0; b < 9; ++b) EXPECT_EQ(m.z_s[(k * 6 + i) * 9 + b], m.z_s[(k * 6) * 9 + b]);
}

TEST(MotionTarget, RigidTranslationRawSteps) {
  const synth::Velocity v{1.5, -0.5};
  std::vector<Trajectory> trajs;
  for (const auto& s : seed_points({8, 8}, 16, 16, 4))
    trajs.push_back({synth::analytic_trajectory(s, v, 6), true});
  for (const auto& t : trajs) {
    const auto dp = position_features(t);
    for (int i = 0; i < 6; ++i) {
      EXPECT_DOUBLE_EQ(dp[2 * i], 1.5);
      EXPECT_DOUBLE_EQ(dp[2 * i + 1], -0.5);
    }
  }
}

TEST(MotionTarget, CumulativeSumInvertsPositions) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3.0, 3.0), pos(10.0, 50.0);
  for (int rep = 0; rep < 50; ++rep) {
    Trajectory t;
    t.points.push_back({pos(rng), pos(rng)});
    for (int i = 0; i < 6; ++i) t.points.push_back(t.points.back() + Point{u(rng), u(rng)});
    const auto dp = position_features(t);
    Point p = t.points[0];
    for (int i = 0; i < 6; ++i) {
      p = p + Point{dp[2 * i], dp[2 * i + 1]};
      EXPECT_NEAR(p.x, t.points[i + 1].x, 1e-12);
      EXPECT_NEAR(p.y, t.points[i + 1].y, 1e-12);
    }
  }
}

TEST(MotionTarget, PartsStandardizedOverValidTrajectories) {
  const auto [seq, gt] = synth::gen_translating_texture(48, 48, {1, 0}, 7, 8);
  const auto frames = frame_ptrs(seq.frames());
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<Trajectory> trajs;
  for (const auto& s : seed_points({16, 16}, 16, 16, 4)) {
    Trajectory t{{s}, true};
    for (int i = 0; i < 6; ++i) t.points.push_back(t.points.back() + Point{u(rng), u(rng)});
    trajs.push_back(t);
  }
  trajs[2].valid = false;
  const auto m = assemble_motion_target(trajs, frames);
  EXPECT_EQ(m.validity, (std::vector<std::uint8_t>{1, 1, 0, 1}));
  std::vector<std::uint8_t> inc_p(48, 1), inc_s(216, 1);
  std::fill_n(inc_p.begin() + 24, 12, 0);
  std::fill_n(inc_s.begin() + 108, 54, 0);
  expect_standardized(m.z_p, inc_p);
  expect_standardized(m.z_s, inc_s);
  for (int i = 24; i < 36; ++i) EXPECT_EQ(m.z_p[i], 0.0);
  for (int i = 108; i < 162; ++i) EXPECT_EQ(m.z_s[i], 0.0);
  const auto c = m.concatenated();
  ASSERT_EQ(c.size(), 264u);
  EXPECT_EQ(c[48], m.z_s[0]);
}

TEST(MotionTarget, Errors) {
  std::vector<Trajectory> trajs{{{{1, 1}, {2, 2}, {3, 3}}, true}};
  const Frame f(16, 16);
  std::vector<const Frame*> one{&f};
  EXPECT_THROW(assemble_motion_target(trajs, one), InvalidArgument);
  EXPECT_NO_THROW(assemble_motion_target(trajs, one, false));
  EXPECT_THROW(assemble_motion_target({}, one), InvalidArgument);
}

TEST(ComponentMask, InvalidTrajectoryExcluded) {
  TargetConfig c;
  const std::vector<std::uint8_t> validity{1, 0, 1, 1};
  const auto inc = component_mask(c, 264, validity);
  EXPECT_EQ(std::count(inc.begin(), inc.end(), 0), 66);
  for (int i = 12; i < 24; ++i) EXPECT_EQ(inc[i], 0);
  for (int i = 48 + 54; i < 48 + 108; ++i) EXPECT_EQ(inc[i], 0);
  c.kind = TargetKind::kTrajectoryNoShape;
  const auto ns = component_mask(c, 84, validity);
  EXPECT_EQ(std::count(ns.begin(), ns.end(), 0), 12);
  EXPECT_EQ(ns[36 + 12], 0);
}

TEST(M3vt, RandomRoundTrip) {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (int kind = 0; kind <= 6; ++kind) {
    TargetFile f;
    f.grid = build_patch_grid(16, 32, 48, 2, 16, 16);
    f.channels = kind == 0 ? 3 : 1;
    f.config.kind = static_cast<TargetKind>(kind);
    f.mask_type = kind % 2 ? MaskType::kCube : MaskType::kTube;
    f.mask_seed = rng();
    f.ratio = 0.7f;
    f.s_rgb = 2;
    f.s_flow = 1;
    for (std::uint32_t p = 0; p < f.grid.size(); p += 3) {
      PatchTarget t{p, {1, 0, 1, 1}, std::vector<float>(f.dim())};
      for (auto& v : t.values) v = n(rng);
      f.patches.push_back(t);
    }
    const auto bytes = encode_m3vt(f);
    const auto back = decode_m3vt(bytes);
    EXPECT_EQ(back.grid, f.grid);
    EXPECT_EQ(back.patches, f.patches);
    EXPECT_EQ(back.mask_seed, f.mask_seed);
    EXPECT_EQ(encode_m3vt(back), bytes);
  }
}

TEST(M3vt, CorruptInputs) {
  TargetFile f;
  f.grid = build_patch_grid(16, 32, 32, 2, 16, 16);
  f.config.kind = TargetKind::kHog;
  f.patches.push_back({3, {1, 1, 1, 1}, std::vector<float>(36, 0.5f)});
  const auto b = encode_m3vt(f);
  auto t = b;
  t.pop_back();
  EXPECT_THROW(decode_m3vt(t), FormatError);
  auto m = b;
  m[1] = 'X';
  EXPECT_THROW(decode_m3vt(m), FormatError);
  auto idx = b;
  const std::size_t entry = b.size() - (4 + 4 + 36 * 4);
  idx[entry] = 200;
  EXPECT_THROW(decode_m3vt(idx), FormatError);
}
