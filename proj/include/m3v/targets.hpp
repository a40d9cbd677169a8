#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "m3v/binary_io.hpp"
#include "m3v/descriptors.hpp"
#include "m3v/error.hpp"
#include "m3v/flow.hpp"
#include "m3v/image.hpp"
#include "m3v/trajectories.hpp"

namespace m3v {

// ---------------------------------------------------------------------------
// Patch grid

struct PatchShape {
  int t = 2;
  int h = 16;
  int w = 16;

  friend bool operator==(const PatchShape&, const PatchShape&) = default;
};

struct PatchCoord {
  int t = 0;
  int y = 0;
  int x = 0;
};

// Non-overlapping t x h x w tiling of a T x H x W clip. Linear patch index
// runs x fastest, then y, then t.
class PatchGrid {
 public:
  PatchGrid() = default;
  PatchGrid(int frames, int height, int width, PatchShape shape)
      : frames_(frames), height_(height), width_(width), shape_(shape) {
    if (frames <= 0 || height <= 0 || width <= 0 || shape.t <= 0 || shape.h <= 0 ||
        shape.w <= 0) {
      throw InvalidArgument("patch grid dimensions must be positive");
    }
    if (frames % shape.t || height % shape.h || width % shape.w) {
      throw InvalidArgument("clip " + std::to_string(frames) + "x" + std::to_string(height) +
                            "x" + std::to_string(width) + " is not divisible by patch " +
                            std::to_string(shape.t) + "x" + std::to_string(shape.h) + "x" +
                            std::to_string(shape.w));
    }
  }

  int frames() const noexcept { return frames_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  const PatchShape& shape() const noexcept { return shape_; }
  int grid_t() const noexcept { return frames_ / shape_.t; }
  int grid_h() const noexcept { return height_ / shape_.h; }
  int grid_w() const noexcept { return width_ / shape_.w; }
  std::size_t spatial_size() const noexcept {
    return static_cast<std::size_t>(grid_h()) * grid_w();
  }
  std::size_t size() const noexcept { return spatial_size() * grid_t(); }

  std::size_t index(PatchCoord c) const noexcept {
    return (static_cast<std::size_t>(c.t) * grid_h() + c.y) * grid_w() + c.x;
  }
  PatchCoord coord(std::size_t i) const noexcept {
    const auto gw = static_cast<std::size_t>(grid_w());
    const auto gh = static_cast<std::size_t>(grid_h());
    return {static_cast<int>(i / (gw * gh)), static_cast<int>((i / gw) % gh),
            static_cast<int>(i % gw)};
  }
  // Top-left pixel of the patch's spatial footprint.
  Point origin(std::size_t i) const noexcept {
    const auto c = coord(i);
    return {static_cast<double>(c.x * shape_.w), static_cast<double>(c.y * shape_.h)};
  }

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;

 private:
  int frames_ = 0;
  int height_ = 0;
  int width_ = 0;
  PatchShape shape_;
};

inline PatchGrid build_patch_grid(int frames, int height, int width, int t, int h, int w) {
  return PatchGrid(frames, height, width, {t, h, w});
}

// ---------------------------------------------------------------------------
// Masking

enum class MaskType : std::uint8_t { kTube = 0, kCube = 1 };

inline std::string_view to_string(MaskType t) { return t == MaskType::kTube ? "tube" : "cube"; }

inline MaskType parse_mask_type(std::string_view s) {
  if (s == "tube") return MaskType::kTube;
  if (s == "cube") return MaskType::kCube;
  throw InvalidArgument("unknown mask type \"" + std::string(s) + "\"");
}

struct MaskMap {
  MaskType type = MaskType::kTube;
  double ratio = 0.0;
  std::vector<std::uint8_t> masked;  // one flag per patch, grid order

  bool is_masked(std::size_t i) const { return masked[i] != 0; }
  std::size_t count() const {
    return static_cast<std::size_t>(std::count(masked.begin(), masked.end(), std::uint8_t{1}));
  }
  std::vector<std::size_t> masked_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < masked.size(); ++i)
      if (masked[i]) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> visible_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < masked.size(); ++i)
      if (!masked[i]) out.push_back(i);
    return out;
  }
};

// Round half up.
inline std::size_t masked_cell_count(double ratio, std::size_t cells) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(cells) + 0.5));
}

// Tube masks pick spatial cells and repeat them through time; cube masks
// pick individual patches. Deterministic in `seed`.
inline MaskMap generate_mask(const PatchGrid& grid, MaskType type, double ratio,
                             std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("mask ratio must lie in (0, 1)");
  const std::size_t cells = type == MaskType::kTube ? grid.spatial_size() : grid.size();
  const std::size_t n = masked_cell_count(ratio, cells);
  if (n == 0 || n == cells) {
    throw InvalidArgument("mask ratio " + std::to_string(ratio) + " masks " + std::to_string(n) +
                          " of " + std::to_string(cells) + " cells");
  }
  std::vector<std::size_t> order(cells);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  MaskMap m{type, ratio, std::vector<std::uint8_t>(grid.size(), 0)};
  for (std::size_t k = 0; k < n; ++k) {
    if (type == MaskType::kCube) {
      m.masked[order[k]] = 1;
    } else {
      for (int t = 0; t < grid.grid_t(); ++t) m.masked[t * grid.spatial_size() + order[k]] = 1;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Temporal sampling

inline constexpr int kClipLength = 16;

struct SamplingPlan {
  std::vector<int> input_indices;  // raw frame index of each clip slot
  std::vector<int> anchors;        // raw frame index where each temporal patch's tracks start
  int s_rgb = 2;
  int s_flow = 2;
  bool interpolate = false;

  // Raw frames needed so every anchor can be followed for L flow steps.
  int required_length(int trajectory_length) const {
    return anchors.empty() ? 0 : anchors.back() + trajectory_length * s_flow + 1;
  }
};

// Input slots o, o+s, ..., o+15s. Tracks move at raw rate (s_flow = 1) when
// interpolating and at the input stride otherwise.
inline SamplingPlan plan_sampling(int video_len, int s_rgb, bool interpolate, int offset = 0,
                                  int patch_t = 2) {
  if (s_rgb < 1) throw InvalidArgument("sampling stride must be >= 1");
  if (offset < 0) throw InvalidArgument("sampling offset must be >= 0");
  if (patch_t < 1 || kClipLength % patch_t) throw InvalidArgument("temporal patch must divide 16");
  if (video_len < kClipLength * s_rgb || offset + (kClipLength - 1) * s_rgb >= video_len) {
    throw InvalidArgument("video of " + std::to_string(video_len) + " frames is too short for a " +
                          "16-frame clip at stride " + std::to_string(s_rgb));
  }
  SamplingPlan p;
  p.s_rgb = s_rgb;
  p.interpolate = interpolate;
  p.s_flow = interpolate ? 1 : s_rgb;
  for (int i = 0; i < kClipLength; ++i) p.input_indices.push_back(offset + i * s_rgb);
  for (int t = 0; t < kClipLength; t += patch_t) p.anchors.push_back(p.input_indices[t]);
  return p;
}

// ---------------------------------------------------------------------------
// Target definitions

enum class TargetKind : std::uint8_t {
  kPixel = 0,
  kHog = 1,
  kHogFlow = 2,
  kHogHof = 3,
  kHogMbh = 4,
  kTrajectory = 5,
  kTrajectoryNoShape = 6,
};

inline std::string_view to_string(TargetKind k) {
  switch (k) {
    case TargetKind::kPixel: return "pixel";
    case TargetKind::kHog: return "hog";
    case TargetKind::kHogFlow: return "hog+flow";
    case TargetKind::kHogHof: return "hog+hof";
    case TargetKind::kHogMbh: return "hog+mbh";
    case TargetKind::kTrajectory: return "trajectory";
    case TargetKind::kTrajectoryNoShape: return "trajectory_no_shape";
  }
  return "?";
}

inline TargetKind parse_target_kind(std::string_view s) {
  for (int i = 0; i <= 6; ++i) {
    const auto k = static_cast<TargetKind>(i);
    if (to_string(k) == s) return k;
  }
  throw InvalidArgument("unknown target kind \"" + std::string(s) + "\"");
}

inline bool uses_trajectories(TargetKind k) {
  return k == TargetKind::kTrajectory || k == TargetKind::kTrajectoryNoShape;
}

inline bool uses_flow(TargetKind k) {
  return uses_trajectories(k) || k == TargetKind::kHogFlow || k == TargetKind::kHogHof ||
         k == TargetKind::kHogMbh;
}

struct TargetConfig {
  int L = 6;
  int K = 4;
  TargetKind kind = TargetKind::kTrajectory;

  void validate() const {
    if (L < 0) throw InvalidArgument("trajectory length L must be >= 0");
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(K))));
    if (K < 1 || side * side != K) throw InvalidArgument("K must be a positive perfect square");
  }
};

// Length of one patch's regression vector.
inline std::size_t target_dim(const TargetConfig& cfg, const PatchShape& shape, int channels) {
  const std::size_t k = cfg.K;
  const std::size_t l = cfg.L;
  switch (cfg.kind) {
    case TargetKind::kPixel: return static_cast<std::size_t>(shape.t) * shape.h * shape.w * channels;
    case TargetKind::kHog: return 9 * k;
    case TargetKind::kHogFlow: return 9 * k + 2 * static_cast<std::size_t>(shape.h) * shape.w;
    case TargetKind::kHogHof: return 18 * k;
    case TargetKind::kHogMbh: return 27 * k;
    case TargetKind::kTrajectory: return 11 * k * l;
    case TargetKind::kTrajectoryNoShape: return 9 * k + 2 * k * l;
  }
  return 0;
}

// Per-component loss participation: components owned by an invalid
// trajectory are excluded.
inline std::vector<std::uint8_t> component_mask(const TargetConfig& cfg, std::size_t dim,
                                                std::span<const std::uint8_t> validity) {
  std::vector<std::uint8_t> inc(dim, 1);
  const std::size_t k = cfg.K;
  const std::size_t l = cfg.L;
  if (cfg.kind == TargetKind::kTrajectory) {
    for (std::size_t j = 0; j < k; ++j) {
      if (validity[j]) continue;
      std::fill_n(inc.begin() + j * l * 2, l * 2, std::uint8_t{0});
      std::fill_n(inc.begin() + k * l * 2 + j * l * 9, l * 9, std::uint8_t{0});
    }
  } else if (cfg.kind == TargetKind::kTrajectoryNoShape) {
    for (std::size_t j = 0; j < k; ++j)
      if (!validity[j]) std::fill_n(inc.begin() + 9 * k + j * l * 2, l * 2, std::uint8_t{0});
  }
  return inc;
}

// Standard-score normalization over the included entries; excluded entries
// become zero. With std below 1e-6 the entries are only mean-centered.
inline void patch_normalize(std::span<double> values, std::span<const std::uint8_t> include) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (include[i]) {
      sum += values[i];
      ++n;
    }
  if (n == 0) {
    std::fill(values.begin(), values.end(), 0.0);
    return;
  }
  const double mean = sum / n;
  double var = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (include[i]) var += (values[i] - mean) * (values[i] - mean);
  const double sd = std::sqrt(var / n);
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!include[i]) {
      values[i] = 0.0;
    } else {
      values[i] = sd < 1e-6 ? values[i] - mean : (values[i] - mean) / sd;
    }
  }
}

inline void patch_normalize(std::span<double> values) {
  const std::vector<std::uint8_t> all(values.size(), 1);
  patch_normalize(values, all);
}

// Position and shape parts for K trajectories of one patch, each normalized
// over the valid trajectories of the patch. Layouts are k-major:
// z_p[(k*L + i)*2 + {0,1}], z_s[(k*L + i)*9 + bin].
struct TrajectoryMotionTarget {
  int K = 0;
  int L = 0;
  std::vector<double> z_p;
  std::vector<double> z_s;
  std::vector<std::uint8_t> validity;

  // z_p followed by z_s.
  std::vector<double> concatenated() const {
    std::vector<double> out(z_p);
    out.insert(out.end(), z_s.begin(), z_s.end());
    return out;
  }
};

// Relative displacements p_{i+1} - p_i, i = 0..L-1.
inline std::vector<double> position_features(const Trajectory& t) {
  std::vector<double> out;
  out.reserve(2 * t.length());
  for (int i = 0; i < t.length(); ++i) {
    out.push_back(t.points[i + 1].x - t.points[i].x);
    out.push_back(t.points[i + 1].y - t.points[i].y);
  }
  return out;
}

// `step_frames[i]` is the grayscale frame on which step i of every
// trajectory lies. With `with_shape` false z_s is left empty.
inline TrajectoryMotionTarget assemble_motion_target(std::span<const Trajectory> trajectories,
                                                     std::span<const Frame* const> step_frames,
                                                     bool with_shape = true,
                                                     int cell_radius = kDefaultCellRadius) {
  if (trajectories.empty()) throw InvalidArgument("assemble_motion_target needs trajectories");
  const int L = trajectories.front().length();
  for (const auto& t : trajectories) {
    if (t.length() != L) throw InvalidArgument("trajectories of one patch must share L");
  }
  if (with_shape && static_cast<int>(step_frames.size()) < L) {
    throw InvalidArgument("descriptor frame index out of range: " +
                          std::to_string(step_frames.size()) + " frames for L=" +
                          std::to_string(L));
  }
  TrajectoryMotionTarget out;
  out.K = static_cast<int>(trajectories.size());
  out.L = L;
  const std::size_t K = trajectories.size();
  out.z_p.assign(K * L * 2, 0.0);
  if (with_shape) out.z_s.assign(K * L * 9, 0.0);
  std::vector<std::uint8_t> inc_p(out.z_p.size(), 0), inc_s(out.z_s.size(), 0);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& t = trajectories[k];
    out.validity.push_back(t.valid ? 1 : 0);
    if (!t.valid) continue;
    const auto dp = position_features(t);
    std::copy(dp.begin(), dp.end(), out.z_p.begin() + k * L * 2);
    std::fill_n(inc_p.begin() + k * L * 2, L * 2, std::uint8_t{1});
    if (!with_shape) continue;
    for (int i = 0; i < L; ++i) {
      const auto h = hog_at(*step_frames[i], t.points[i], cell_radius);
      std::copy(h.bins.begin(), h.bins.end(), out.z_s.begin() + (k * L + i) * 9);
    }
    std::fill_n(inc_s.begin() + k * L * 9, L * 9, std::uint8_t{1});
  }
  patch_normalize(out.z_p, inc_p);
  if (with_shape) patch_normalize(out.z_s, inc_s);
  return out;
}

// One patch's regression target as stored in .m3vt.
struct PatchTarget {
  std::uint32_t patch_index = 0;
  std::vector<std::uint8_t> validity;  // K flags
  std::vector<float> values;

  friend bool operator==(const PatchTarget&, const PatchTarget&) = default;
};

// ---------------------------------------------------------------------------
// .m3vt target file

struct TargetFile {
  PatchGrid grid;
  int channels = 1;
  TargetConfig config;
  MaskType mask_type = MaskType::kTube;
  std::uint64_t mask_seed = 0;
  float ratio = 0.0f;
  int s_rgb = 1;
  int s_flow = 1;
  std::vector<PatchTarget> patches;

  std::size_t dim() const { return target_dim(config, grid.shape(), channels); }
};

// "M3VT", u16 version, u32 grid_t/grid_h/grid_w, u16 t/h/w, u16 channels,
// u16 K, u16 L, u8 kind, u8 mask type, u64 mask seed, f32 ratio,
// u16 s_rgb, u16 s_flow, u32 entry count; each entry is u32 patch index,
// K validity bytes and dim x f32.
inline Bytes encode_m3vt(const TargetFile& f) {
  const std::size_t dim = f.dim();
  ByteWriter w;
  w.raw("M3VT");
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(f.grid.grid_t()));
  w.u32(static_cast<std::uint32_t>(f.grid.grid_h()));
  w.u32(static_cast<std::uint32_t>(f.grid.grid_w()));
  w.u16(static_cast<std::uint16_t>(f.grid.shape().t));
  w.u16(static_cast<std::uint16_t>(f.grid.shape().h));
  w.u16(static_cast<std::uint16_t>(f.grid.shape().w));
  w.u16(static_cast<std::uint16_t>(f.channels));
  w.u16(static_cast<std::uint16_t>(f.config.K));
  w.u16(static_cast<std::uint16_t>(f.config.L));
  w.u8(static_cast<std::uint8_t>(f.config.kind));
  w.u8(static_cast<std::uint8_t>(f.mask_type));
  w.u64(f.mask_seed);
  w.f32(f.ratio);
  w.u16(static_cast<std::uint16_t>(f.s_rgb));
  w.u16(static_cast<std::uint16_t>(f.s_flow));
  w.u32(static_cast<std::uint32_t>(f.patches.size()));
  for (const auto& p : f.patches) {
    if (p.validity.size() != static_cast<std::size_t>(f.config.K) || p.values.size() != dim) {
      throw InvalidArgument("patch target does not match the file layout");
    }
    w.u32(p.patch_index);
    for (auto v : p.validity) w.u8(v);
    for (float v : p.values) w.f32(v);
  }
  return std::move(w).bytes();
}

inline TargetFile decode_m3vt(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("M3VT");
  r.expect_version(1);
  const auto header_at = r.offset();
  const auto gt = r.u32(), gh = r.u32(), gw = r.u32();
  const PatchShape shape{r.u16(), r.u16(), r.u16()};
  TargetFile f;
  f.channels = r.u16();
  f.config.K = r.u16();
  f.config.L = r.u16();
  const auto kind_at = r.offset();
  const auto kind = r.u8();
  if (kind > 6) throw FormatError(FormatErrorKind::kMalformed, kind_at, "target kind code");
  f.config.kind = static_cast<TargetKind>(kind);
  const auto mask_at = r.offset();
  const auto mask = r.u8();
  if (mask > 1) throw FormatError(FormatErrorKind::kMalformed, mask_at, "mask type code");
  f.mask_type = static_cast<MaskType>(mask);
  f.mask_seed = r.u64();
  f.ratio = r.f32();
  f.s_rgb = r.u16();
  f.s_flow = r.u16();
  try {
    f.grid = PatchGrid(static_cast<int>(gt * shape.t), static_cast<int>(gh * shape.h),
                       static_cast<int>(gw * shape.w), shape);
    f.config.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(FormatErrorKind::kMalformed, header_at, e.what());
  }
  if (f.channels != 1 && f.channels != 3) {
    throw FormatError(FormatErrorKind::kMalformed, header_at, "channel count");
  }
  const auto count = r.u32();
  const std::size_t dim = f.dim();
  const std::size_t per = 4 + f.config.K + dim * 4;
  if (r.remaining() < per * count) {
    throw FormatError(FormatErrorKind::kTruncated, r.offset(),
                      std::to_string(count) + " entries declared");
  }
  f.patches.resize(count);
  for (auto& p : f.patches) {
    const auto at = r.offset();
    p.patch_index = r.u32();
    if (p.patch_index >= f.grid.size()) {
      throw FormatError(FormatErrorKind::kMalformed, at, "patch index out of range");
    }
    p.validity.resize(f.config.K);
    for (auto& v : p.validity) v = r.u8();
    p.values.resize(dim);
    for (auto& v : p.values) v = r.f32();
  }
  return f;
}

}  // namespace m3v
