#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "m3v/binary_io.hpp"
#include "m3v/error.hpp"
#include "m3v/flow.hpp"
#include "m3v/image.hpp"

namespace m3v {

// Positions p_t .. p_{t+L} of one tracked grid point.
struct Trajectory {
  std::vector<Point> points;
  bool valid = true;

  int length() const noexcept { return static_cast<int>(points.size()) - 1; }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

inline bool strictly_inside(Point p, int width, int height) {
  return p.x > 0.0 && p.x < width && p.y > 0.0 && p.y < height;
}

// Centers of the sqrt(K) x sqrt(K) sub-grid of a patch, row-major.
inline std::vector<Point> seed_points(Point patch_origin, int patch_h, int patch_w, int k) {
  if (k < 1) throw InvalidArgument("K must be positive");
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(k))));
  if (side * side != k) throw InvalidArgument("K must be a perfect square");
  if (patch_h < side || patch_w < side) throw InvalidArgument("patch smaller than sqrt(K)");
  const double sx = static_cast<double>(patch_w) / side;
  const double sy = static_cast<double>(patch_h) / side;
  std::vector<Point> out;
  out.reserve(k);
  for (int j = 0; j < side; ++j)
    for (int i = 0; i < side; ++i)
      out.push_back({patch_origin.x + (i + 0.5) * sx, patch_origin.y + (j + 0.5) * sy});
  return out;
}

// Follows p_{k+1} = p_k + flow_k(p_k) with bilinear flow sampling. Once a
// step leaves the open frame rectangle the rest of the track repeats the
// last in-bounds point and the trajectory is marked invalid.
inline Trajectory track_trajectory(Point seed, std::span<const FlowField> flows) {
  if (flows.empty()) throw InvalidArgument("track_trajectory needs at least one flow field");
  const int w = flows.front().width();
  const int h = flows.front().height();
  for (const auto& f : flows) {
    if (f.width() != w || f.height() != h) {
      throw InvalidArgument("track_trajectory: flow fields differ in size");
    }
  }
  if (!strictly_inside(seed, w, h)) throw InvalidArgument("track_trajectory: seed outside frame");

  Trajectory t;
  t.points.reserve(flows.size() + 1);
  t.points.push_back(seed);
  Point p = seed;
  for (const auto& f : flows) {
    if (t.valid) {
      const Point next = p + f.sample(p);
      if (strictly_inside(next, w, h)) {
        p = next;
      } else {
        t.valid = false;
      }
    }
    t.points.push_back(p);
  }
  return t;
}

struct AnchoredTrajectory {
  std::uint32_t anchor_frame = 0;  // raw video index of points[0]
  Trajectory trajectory;

  friend bool operator==(const AnchoredTrajectory&, const AnchoredTrajectory&) = default;
};

// All trajectories extracted from one video. Every trajectory has length L.
struct TrajectoryPack {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint16_t length = 0;  // L
  std::uint16_t flow_stride = 1;
  std::vector<AnchoredTrajectory> trajectories;

  friend bool operator==(const TrajectoryPack&, const TrajectoryPack&) = default;
};

// M3TP: "M3TP", u16 version, u32 W, u32 H, u16 L, u16 s_flow, u32 count,
// then per trajectory u32 anchor, u8 valid, (L+1) x (f32 x, f32 y).
inline Bytes encode_m3tp(const TrajectoryPack& pack) {
  ByteWriter w;
  w.raw("M3TP");
  w.u16(1);
  w.u32(pack.width);
  w.u32(pack.height);
  w.u16(pack.length);
  w.u16(pack.flow_stride);
  w.u32(static_cast<std::uint32_t>(pack.trajectories.size()));
  for (const auto& at : pack.trajectories) {
    if (at.trajectory.points.size() != static_cast<std::size_t>(pack.length) + 1) {
      throw InvalidArgument("trajectory length differs from the pack's L");
    }
    w.u32(at.anchor_frame);
    w.u8(at.trajectory.valid ? 1 : 0);
    for (const auto& p : at.trajectory.points) {
      w.f32(static_cast<float>(p.x));
      w.f32(static_cast<float>(p.y));
    }
  }
  return std::move(w).bytes();
}

inline TrajectoryPack decode_m3tp(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("M3TP");
  r.expect_version(1);
  TrajectoryPack pack;
  pack.width = r.u32();
  pack.height = r.u32();
  pack.length = r.u16();
  pack.flow_stride = r.u16();
  const auto count = r.u32();
  const std::size_t per = 4 + 1 + (static_cast<std::size_t>(pack.length) + 1) * 8;
  if (r.remaining() < per * count) {
    throw FormatError(FormatErrorKind::kTruncated, r.offset(),
                      std::to_string(count) + " trajectories declared");
  }
  pack.trajectories.resize(count);
  for (auto& at : pack.trajectories) {
    at.anchor_frame = r.u32();
    const auto flag_at = r.offset();
    const auto flag = r.u8();
    if (flag > 1) throw FormatError(FormatErrorKind::kMalformed, flag_at, "validity flag");
    at.trajectory.valid = flag == 1;
    at.trajectory.points.resize(pack.length + 1);
    for (auto& p : at.trajectory.points) {
      p.x = r.f32();
      p.y = r.f32();
    }
  }
  return pack;
}

}  // namespace m3v
