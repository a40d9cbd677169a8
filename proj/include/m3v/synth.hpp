#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "m3v/binary_io.hpp"
#include "m3v/flow.hpp"
#include "m3v/image.hpp"

// Synthetic scenes with analytic motion, file writers, and brute-force
// reference implementations used by the test suites.
namespace m3v::synth {

struct Velocity {
  double u = 0.0;
  double v = 0.0;
};

// Four motion-direction classes: +x, -x, +y, -y (dominant axis wins).
inline int direction_class(Velocity vel) {
  if (std::abs(vel.u) >= std::abs(vel.v)) return vel.u >= 0.0 ? 0 : 1;
  return vel.v >= 0.0 ? 2 : 3;
}

struct GroundTruth {
  std::vector<FlowField> flows;  // flows[k] maps frame k to frame k+1
  Velocity velocity;
  int label = 0;
};

// Periodic band-limited noise: white noise smoothed by a wrapped Gaussian,
// rescaled to the requested mean and standard deviation and clipped to
// [0, 255].
inline Frame smooth_noise_texture(int width, int height, double sigma, double mean, double stddev,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::vector<double> a(static_cast<std::size_t>(width) * height);
  for (auto& x : a) x = uni(rng);

  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double ks = 0.0;
  for (int i = -radius; i <= radius; ++i) ks += (k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& x : k) x /= ks;
  auto wrap = [](int i, int n) { return ((i % n) + n) % n; };

  std::vector<double> b(a.size());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * a[y * width + wrap(x + i, width)];
      b[y * width + x] = acc;
    }
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * b[wrap(y + i, height) * width + x];
      a[y * width + x] = acc;
    }

  double m = 0.0;
  for (double x : a) m += x;
  m /= a.size();
  double var = 0.0;
  for (double x : a) var += (x - m) * (x - m);
  const double s = std::sqrt(var / a.size());
  Frame out(width, height, 1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    out.data()[i] = std::clamp(mean + (s > 0 ? (a[i] - m) / s * stddev : 0.0), 0.0, 255.0);
  }
  return out;
}

// Bilinear sample of a periodic texture.
inline double sample_wrapped(const Frame& tex, double x, double y) {
  const int w = tex.width();
  const int h = tex.height();
  const double fx0 = std::floor(x);
  const double fy0 = std::floor(y);
  const double fx = x - fx0;
  const double fy = y - fy0;
  auto wrap = [](long long i, int n) { return static_cast<int>(((i % n) + n) % n); };
  const int x0 = wrap(static_cast<long long>(fx0), w);
  const int y0 = wrap(static_cast<long long>(fy0), h);
  const int x1 = (x0 + 1) % w;
  const int y1 = (y0 + 1) % h;
  return (tex.at(x0, y0) * (1.0 - fx) + tex.at(x1, y0) * fx) * (1.0 - fy) +
         (tex.at(x0, y1) * (1.0 - fx) + tex.at(x1, y1) * fx) * fy;
}

struct TextureParams {
  double sigma = 2.0;
  double mean = 128.0;
  double stddev = 35.0;
};

// Periodic texture translated by `velocity` per frame.
inline std::pair<FrameSequence, GroundTruth> gen_translating_texture(
    int width, int height, Velocity velocity, int frames, std::uint64_t seed,
    const TextureParams& tp = {}) {
  if (frames < 1) throw InvalidArgument("gen_translating_texture needs at least one frame");
  const Frame tex = smooth_noise_texture(width, height, tp.sigma, tp.mean, tp.stddev, seed);
  std::vector<Frame> out;
  GroundTruth gt;
  gt.velocity = velocity;
  gt.label = direction_class(velocity);
  for (int k = 0; k < frames; ++k) {
    Frame f(width, height, 1);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        f.at(x, y) = sample_wrapped(tex, x - k * velocity.u, y - k * velocity.v);
    out.push_back(std::move(f));
    if (k + 1 < frames) gt.flows.emplace_back(width, height, velocity.u, velocity.v);
  }
  return {FrameSequence(std::move(out), 25.0), std::move(gt)};
}

struct DiskParams {
  TextureParams background{2.0, 128.0, 35.0};
  TextureParams disk{1.5, 128.0, 35.0};
  double disk_offset = 0.0;  // added to the disk texture
};

struct DiskScene {
  Point start;  // disk center in frame 0
  double radius = 0.0;
  Velocity velocity;
  // Nonzero: the scene is a torus of this size and the disk re-enters on
  // the opposite side after leaving the frame.
  int wrap_width = 0;
  int wrap_height = 0;

  Point center(int k) const { return {start.x + k * velocity.u, start.y + k * velocity.v}; }
  bool inside(int k, double x, double y) const {
    const Point c = center(k);
    double dx = x - c.x, dy = y - c.y;
    if (wrap_width > 0) dx = std::remainder(dx, static_cast<double>(wrap_width));
    if (wrap_height > 0) dy = std::remainder(dy, static_cast<double>(wrap_height));
    return radius > 0.0 && dx * dx + dy * dy <= radius * radius;
  }
};

// Textured disk translating over a static textured background. Analytic
// flow is the disk velocity on disk pixels and zero elsewhere.
inline std::pair<FrameSequence, GroundTruth> render_disk_scene(int width, int height,
                                                               const DiskScene& scene, int frames,
                                                               std::uint64_t seed,
                                                               const DiskParams& dp = {}) {
  if (frames < 1) throw InvalidArgument("disk scene needs at least one frame");
  const Frame bg = smooth_noise_texture(width, height, dp.background.sigma, dp.background.mean,
                                        dp.background.stddev, seed);
  const Frame fg = smooth_noise_texture(width, height, dp.disk.sigma, dp.disk.mean,
                                        dp.disk.stddev, seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Frame> out;
  GroundTruth gt;
  gt.velocity = scene.velocity;
  gt.label = direction_class(scene.velocity);
  for (int k = 0; k < frames; ++k) {
    Frame f = bg;
    const Point c = scene.center(k);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if (scene.inside(k, x, y)) {
          const double v = sample_wrapped(fg, x - (c.x - scene.start.x), y - (c.y - scene.start.y));
          f.at(x, y) = std::clamp(v + dp.disk_offset, 0.0, 255.0);
        }
    out.push_back(std::move(f));
    if (k + 1 < frames) {
      FlowField flow(width, height);
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
          if (scene.inside(k, x, y)) {
            flow.u(x, y) = scene.velocity.u;
            flow.v(x, y) = scene.velocity.v;
          }
      gt.flows.push_back(std::move(flow));
    }
  }
  return {FrameSequence(std::move(out), 25.0), std::move(gt)};
}

// Disk centered in the frame at time 0.
inline std::pair<FrameSequence, GroundTruth> gen_moving_disk(int width, int height, double radius,
                                                             Velocity velocity, int frames,
                                                             std::uint64_t seed,
                                                             const DiskParams& dp = {}) {
  const DiskScene scene{{(width - 1) / 2.0, (height - 1) / 2.0}, radius, velocity};
  return render_disk_scene(width, height, scene, frames, seed, dp);
}

// Positions of a point rigidly carried by `velocity` for `steps` frames.
inline std::vector<Point> analytic_trajectory(Point seed, Velocity velocity, int steps) {
  std::vector<Point> pts;
  for (int k = 0; k <= steps; ++k) pts.push_back({seed.x + k * velocity.u, seed.y + k * velocity.v});
  return pts;
}

struct DiskClip {
  FrameSequence video;
  GroundTruth truth;
  DiskScene scene;
};

struct DiskDatasetParams {
  int clips = 256;
  int width = 32;
  int height = 32;
  int frames = 16;
  double radius = 7.0;
  double speed = 3.0;
  bool wrap = true;
  DiskParams appearance;
};

// Balanced four-direction dataset: clip i moves along direction i % 4 at
// `speed` px/frame from a random start position inside the frame. With
// `wrap` the disk re-enters on the far side, so its position carries no
// hint of its direction.
inline std::vector<DiskClip> make_disk_dataset(const DiskDatasetParams& p, std::uint64_t seed) {
  static constexpr std::array<Velocity, 4> kDirs{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
  std::mt19937_64 rng(seed);
  std::vector<DiskClip> out;
  out.reserve(p.clips);
  for (int i = 0; i < p.clips; ++i) {
    const Velocity vel{kDirs[i % 4].u * p.speed, kDirs[i % 4].v * p.speed};
    const double mx = p.wrap ? 0.0 : p.radius;
    const double my = p.wrap ? 0.0 : p.radius;
    std::uniform_real_distribution<double> ux(mx, p.width - 1 - mx);
    std::uniform_real_distribution<double> uy(my, p.height - 1 - my);
    DiskScene scene{{ux(rng), uy(rng)}, p.radius, vel};
    if (p.wrap) {
      scene.wrap_width = p.width;
      scene.wrap_height = p.height;
    }
    const std::uint64_t clip_seed = rng();
    auto [video, truth] = render_disk_scene(p.width, p.height, scene, p.frames, clip_seed,
                                            p.appearance);
    out.push_back({std::move(video), std::move(truth), scene});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Writers

inline std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

// Frame with every sample rounded the way the writers store it.
inline Frame quantized(const Frame& f) {
  Frame out = f;
  for (auto& v : out.data()) v = quantize(v);
  return out;
}

enum class Y4mColorspace { kMono, k420 };

// YUV4MPEG2 stream of the luma of each frame; 4:2:0 output carries neutral
// chroma (128).
inline Bytes encode_y4m(const FrameSequence& seq, Y4mColorspace cs = Y4mColorspace::kMono) {
  const FrameSequence gray = to_grayscale(seq);
  const int w = gray.width();
  const int h = gray.height();
  if (cs == Y4mColorspace::k420 && (w % 2 || h % 2)) {
    throw InvalidArgument("4:2:0 output needs even dimensions");
  }
  ByteWriter out;
  const int fps = seq.frame_rate() > 0 ? static_cast<int>(std::lround(seq.frame_rate())) : 25;
  out.raw("YUV4MPEG2 W" + std::to_string(w) + " H" + std::to_string(h) + " F" +
          std::to_string(fps) + ":1 Ip A1:1 " + (cs == Y4mColorspace::kMono ? "Cmono" : "C420") +
          "\n");
  for (const auto& f : gray) {
    out.raw("FRAME\n");
    for (double v : f.data()) out.u8(quantize(v));
    if (cs == Y4mColorspace::k420) {
      for (int i = 0; i < w * h / 2; ++i) out.u8(128);
    }
  }
  return std::move(out).bytes();
}

inline Bytes encode_pnm(const Frame& f) {
  ByteWriter out;
  out.raw(std::string(f.channels() == 1 ? "P5" : "P6") + "\n" + std::to_string(f.width()) + " " +
          std::to_string(f.height()) + "\n255\n");
  for (double v : f.data()) out.u8(quantize(v));
  return std::move(out).bytes();
}

// Writes frame_0000.pgm (or .ppm) ... into `dir`; returns the paths in order.
inline std::vector<std::string> write_pnm_sequence(const FrameSequence& seq, const std::string& dir) {
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.%s", i, seq.channels() == 1 ? "pgm" : "ppm");
    paths.push_back(dir + "/" + name);
    write_file(paths.back(), encode_pnm(seq[i]));
  }
  return paths;
}

// ---------------------------------------------------------------------------
// Brute-force reference implementations

// Naive orientation histogram: explicit loops, atan2 in degrees, the two
// nearest bin centers found by distance.
inline std::array<double, 9> histogram_oracle(const std::vector<double>& gx,
                                              const std::vector<double>& gy, int width, int height,
                                              Point center, int cell_radius) {
  std::array<double, 9> bins{};
  const int cx = std::min(static_cast<int>(std::lround(center.x)), width - 1);
  const int cy = std::min(static_cast<int>(std::lround(center.y)), height - 1);
  for (int yy = cy - cell_radius; yy <= cy + cell_radius; ++yy) {
    for (int xx = cx - cell_radius; xx <= cx + cell_radius; ++xx) {
      const int sx = xx < 0 ? 0 : (xx >= width ? width - 1 : xx);
      const int sy = yy < 0 ? 0 : (yy >= height ? height - 1 : yy);
      const double a = gx[sy * width + sx];
      const double b = gy[sy * width + sx];
      const double mag = std::sqrt(a * a + b * b);
      if (mag == 0.0) continue;
      double deg = std::atan2(b, a) * 180.0 / 3.14159265358979323846;
      while (deg < 0.0) deg += 180.0;
      while (deg >= 180.0) deg -= 180.0;
      int lower = 0;
      for (int k = 0; k < 9; ++k)
        if (k * 20.0 <= deg) lower = k;
      const int upper = (lower + 1) % 9;
      const double dist = deg - lower * 20.0;
      bins[lower] += mag * (20.0 - dist) / 20.0;
      bins[upper] += mag * dist / 20.0;
    }
  }
  double total = 0.0;
  for (double v : bins) total += v;
  for (double& v : bins) v = total < 1e-6 ? 0.0 : v / total;
  return bins;
}

inline void oracle_gradients(const std::vector<double>& img, int width, int height,
                             std::vector<double>& gx, std::vector<double>& gy) {
  gx.assign(img.size(), 0.0);
  gy.assign(img.size(), 0.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const int xl = x > 0 ? x - 1 : 0, xr = x < width - 1 ? x + 1 : width - 1;
      const int yu = y > 0 ? y - 1 : 0, yd = y < height - 1 ? y + 1 : height - 1;
      gx[y * width + x] = img[y * width + xr] - img[y * width + xl];
      gy[y * width + x] = img[yd * width + x] - img[yu * width + x];
    }
}

inline std::array<double, 9> hog_oracle(const Frame& frame, Point point, int cell_radius = 8) {
  std::vector<double> gx, gy;
  oracle_gradients(frame.data(), frame.width(), frame.height(), gx, gy);
  return histogram_oracle(gx, gy, frame.width(), frame.height(), point, cell_radius);
}

struct MotionHistogramOracle {
  std::array<double, 9> hof, mbh_x, mbh_y;
};

inline MotionHistogramOracle motion_histogram_oracle(const FlowField& flow, Point point,
                                                     int cell_radius = 8) {
  const int w = flow.width();
  const int h = flow.height();
  MotionHistogramOracle out;
  out.hof = histogram_oracle(flow.u_data(), flow.v_data(), w, h, point, cell_radius);
  std::vector<double> gx, gy;
  oracle_gradients(flow.u_data(), w, h, gx, gy);
  out.mbh_x = histogram_oracle(gx, gy, w, h, point, cell_radius);
  oracle_gradients(flow.v_data(), w, h, gx, gy);
  out.mbh_y = histogram_oracle(gx, gy, w, h, point, cell_radius);
  return out;
}

// Sorts the nine neighbours of every pixel.
inline FlowField median_oracle(const FlowField& flow) {
  const int w = flow.width();
  const int h = flow.height();
  FlowField out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::vector<double> us, vs;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = std::min(std::max(x + dx, 0), w - 1);
          const int yy = std::min(std::max(y + dy, 0), h - 1);
          us.push_back(flow.u(xx, yy));
          vs.push_back(flow.v(xx, yy));
        }
      std::sort(us.begin(), us.end());
      std::sort(vs.begin(), vs.end());
      out.u(x, y) = us[4];
      out.v(x, y) = vs[4];
    }
  return out;
}

// Mean of squared differences over the components whose include flag is set.
// Returns 0 when nothing is included.
inline double masked_mean_oracle(const std::vector<std::vector<double>>& pred,
                                 const std::vector<std::vector<double>>& target,
                                 const std::vector<std::vector<bool>>& include) {
  double sum = 0.0;
  long count = 0;
  for (std::size_t p = 0; p < pred.size(); ++p)
    for (std::size_t i = 0; i < pred[p].size(); ++i)
      if (include[p][i]) {
        const double d = pred[p][i] - target[p][i];
        sum += d * d;
        ++count;
      }
  return count == 0 ? 0.0 : sum / count;
}

}  // namespace m3v::synth
