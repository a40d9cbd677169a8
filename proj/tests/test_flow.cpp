#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "m3v/flow.hpp"
#include "m3v/synth.hpp"

using namespace m3v;

namespace {

double interior_epe(const FlowField& f, double u, double v, int margin) {
  double s = 0.0;
  int n = 0;
  for (int y = margin; y < f.height() - margin; ++y)
    for (int x = margin; x < f.width() - margin; ++x) {
      s += std::hypot(f.u(x, y) - u, f.v(x, y) - v);
      ++n;
    }
  return s / n;
}

double mean_magnitude(const FlowField& f, int margin = 0) { return interior_epe(f, 0.0, 0.0, margin); }

FlowField random_field(int w, int h, std::uint64_t seed, double scale = 5.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  FlowField f(w, h);
  for (auto& x : f.u_data()) x = u(rng);
  for (auto& x : f.v_data()) x = u(rng);
  return f;
}

}  // namespace

TEST(DenseFlow, ZeroMotion) {
  const auto [seq, gt] = synth::gen_translating_texture(64, 64, {0, 0}, 2, 11);
  EXPECT_LT(mean_magnitude(compute_dense_flow(seq[0], seq[1])), 0.05);
}

TEST(DenseFlow, IntegerTranslation) {
  const auto [seq, gt] = synth::gen_translating_texture(64, 64, {2, 0}, 2, 12);
  EXPECT_LT(interior_epe(compute_dense_flow(seq[0], seq[1]), 2, 0, 8), 0.25);
}

TEST(DenseFlow, SubpixelTranslation) {
  const auto [seq, gt] = synth::gen_translating_texture(64, 64, {-3, 1.5}, 2, 13);
  EXPECT_LT(interior_epe(compute_dense_flow(seq[0], seq[1]), -3, 1.5, 8), 0.3);
}

TEST(DenseFlow, ClampedToBound) {
  const auto [seq, gt] = synth::gen_translating_texture(64, 64, {3, -2}, 2, 14);
  FlowParams p;
  p.flow_bound = 1.0;
  const auto f = compute_dense_flow(seq[0], seq[1], p);
  for (std::size_t i = 0; i < f.size(); ++i) {
    EXPECT_LE(std::abs(f.u_data()[i]), 1.0);
    EXPECT_LE(std::abs(f.v_data()[i]), 1.0);
  }
}

TEST(DenseFlow, PyramidScaleCovariance) {
  synth::TextureParams small{2.0, 128.0, 35.0}, big{4.0, 128.0, 35.0};
  const auto [a, ga] = synth::gen_translating_texture(64, 64, {1.5, 0.5}, 2, 15, small);
  const auto [b, gb] = synth::gen_translating_texture(128, 128, {3.0, 1.0}, 2, 15, big);
  const double e1 = interior_epe(compute_dense_flow(a[0], a[1]), 1.5, 0.5, 8);
  const double e2 = interior_epe(compute_dense_flow(b[0], b[1]), 3.0, 1.0, 16);
  EXPECT_LE(e2, 2.0 * e1 + 0.02) << e1 << " " << e2;
}

TEST(DenseFlow, RejectsColorAndTinyFrames) {
  EXPECT_THROW(compute_dense_flow(Frame(32, 32, 3), Frame(32, 32, 3)), InvalidArgument);
  EXPECT_THROW(compute_dense_flow(Frame(32, 32), Frame(16, 16)), InvalidArgument);
}

TEST(MedianFilter, ConstantField) {
  const FlowField f(7, 5, 1.5, -0.5);
  EXPECT_EQ(median_filter_flow(f), f);
}

TEST(MedianFilter, SingleOutlierRemoved) {
  FlowField f(5, 5);
  f.u(2, 2) = 10.0;
  EXPECT_EQ(median_filter_flow(f).u(2, 2), 0.0);
}

TEST(MedianFilter, MatchesOracle) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto f = random_field(5, 5, s);
    EXPECT_EQ(median_filter_flow(f), synth::median_oracle(f));
  }
  const auto g = random_field(13, 9, 99);
  EXPECT_EQ(median_filter_flow(g), synth::median_oracle(g));
}

TEST(Homography, DltRecoversKnownMap) {
  const Homography h({1.02, 0.03, 4.0, -0.01, 0.98, -2.0, 1e-4, -2e-4, 1.0});
  std::vector<Correspondence> m;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 64.0);
  for (int i = 0; i < 30; ++i) {
    const Point p{u(rng), u(rng)};
    m.push_back({p, h.apply(p)});
  }
  // Outliers.
  for (int i = 0; i < 8; ++i) m.push_back({{u(rng), u(rng)}, {u(rng), u(rng)}});
  const auto fit = ransac_homography(m, CameraMotionParams{});
  ASSERT_TRUE(fit.has_value());
  EXPECT_GE(fit->inliers.size(), 30u);
  for (int i = 0; i < 9; ++i) EXPECT_NEAR(fit->homography.data()[i], h.data()[i], 1e-6);
}

TEST(Homography, InverseComposesToIdentity) {
  const Homography h({1.1, 0.2, 3.0, -0.1, 0.9, 1.0, 1e-3, 2e-3, 1.0});
  const Point p{10.0, 20.0};
  const Point q = h.inverse().apply(h.apply(p));
  EXPECT_NEAR(q.x, p.x, 1e-9);
  EXPECT_NEAR(q.y, p.y, 1e-9);
}

TEST(CameraCompensation, GlobalTranslationAbsorbed) {
  const auto [seq, gt] = synth::gen_translating_texture(64, 64, {4, 0}, 2, 21);
  const auto c = compensate_camera_motion(seq[0], seq[1]);
  EXPECT_FALSE(c.fallback);
  EXPECT_NEAR(c.homography(0, 2), 4.0, 0.1);
  EXPECT_LT(mean_magnitude(c.flow, 8), 0.3);
}

TEST(CameraCompensation, MovingDiskUnderStaticCamera) {
  const auto [seq, gt] = synth::gen_moving_disk(64, 64, 10.0, {3, 0}, 2, 22);
  const auto c = compensate_camera_motion(seq[0], seq[1]);
  const double cx = 31.5, cy = 31.5;
  double in_err = 0.0, out_mag = 0.0;
  int nin = 0, nout = 0;
  for (int y = 8; y < 56; ++y)
    for (int x = 8; x < 56; ++x) {
      const double r = std::hypot(x - cx, y - cy);
      if (r < 6.0) {
        in_err += std::hypot(c.flow.u(x, y) - 3.0, c.flow.v(x, y));
        ++nin;
      } else if (r > 18.0) {
        out_mag += std::hypot(c.flow.u(x, y), c.flow.v(x, y));
        ++nout;
      }
    }
  EXPECT_LT(in_err / nin, 0.5);
  EXPECT_LT(out_mag / nout, 0.3);
}

TEST(CameraCompensation, UntexturedFallsBack) {
  const Frame f(48, 48, 1, 100.0);
  const auto c = compensate_camera_motion(f, f);
  EXPECT_TRUE(c.fallback);
  EXPECT_EQ(mean_magnitude(c.flow), 0.0);
}

TEST(Flo2, RoundTrip) {
  auto f = random_field(17, 9, 4);
  for (auto& x : f.u_data()) x = static_cast<float>(x);
  for (auto& x : f.v_data()) x = static_cast<float>(x);
  EXPECT_EQ(decode_flo2(encode_flo2(f)), f);
}

TEST(Flo2, TruncatedAndBadMagic) {
  auto b = encode_flo2(FlowField(4, 4, 1, 2));
  auto t = b;
  t.resize(t.size() - 3);
  EXPECT_THROW(decode_flo2(t), FormatError);
  b[0] = 'X';
  EXPECT_THROW(decode_flo2(b), FormatError);
}
