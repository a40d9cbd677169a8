#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "m3v/image.hpp"
#include "m3v/trajectories.hpp"

namespace m3v {

using Rgb = std::array<double, 3>;

// Step color, dark blue at the first step to light yellow at the last.
inline Rgb step_color(int step, int steps) {
  const double f = steps > 1 ? static_cast<double>(step) / (steps - 1) : 1.0;
  constexpr Rgb dark{20, 20, 110};
  constexpr Rgb light{255, 250, 150};
  return {dark[0] + (light[0] - dark[0]) * f, dark[1] + (light[1] - dark[1]) * f,
          dark[2] + (light[2] - dark[2]) * f};
}

inline Frame to_rgb(const Frame& f) {
  if (f.channels() == 3) return f;
  Frame out(f.width(), f.height(), 3);
  for (int y = 0; y < f.height(); ++y)
    for (int x = 0; x < f.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = f.at(x, y);
  return out;
}

// Rasterizes a segment by dense sampling. Dashed lines alternate 2 px on,
// 2 px off along the arc length.
inline void draw_segment(Frame& img, Point a, Point b, const Rgb& color, bool dashed,
                         double& arc) {
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  const int n = std::max(1, static_cast<int>(std::ceil(len * 4.0)));
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / n;
    const double s = arc + t * len;
    if (dashed && std::fmod(s, 4.0) >= 2.0) continue;
    const int x = static_cast<int>(std::lround(a.x + t * (b.x - a.x)));
    const int y = static_cast<int>(std::lround(a.y + t * (b.y - a.y)));
    if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) continue;
    for (int c = 0; c < 3; ++c) img.at(x, y, c) = color[c];
  }
  arc += len;
}

inline void draw_trajectory(Frame& img, const Trajectory& t) {
  double arc = 0.0;
  const int steps = t.length();
  for (int i = 0; i < steps; ++i)
    draw_segment(img, t.points[i], t.points[i + 1], step_color(i, steps), !t.valid, arc);
}

// Anchor frame index -> frame with that anchor's trajectories drawn.
inline std::map<std::uint32_t, Frame> render_overlays(const FrameSequence& video,
                                                      const TrajectoryPack& pack) {
  std::map<std::uint32_t, Frame> out;
  for (const auto& at : pack.trajectories) {
    if (at.anchor_frame >= video.size()) {
      throw InvalidArgument("trajectory anchored at frame " + std::to_string(at.anchor_frame) +
                            " but the video has " + std::to_string(video.size()));
    }
    auto it = out.find(at.anchor_frame);
    if (it == out.end()) it = out.emplace(at.anchor_frame, to_rgb(video[at.anchor_frame])).first;
    draw_trajectory(it->second, at.trajectory);
  }
  return out;
}

// One SVG with every trajectory: one <line> per step, grouped by anchor
// frame; invalid trajectories are dashed.
inline std::string svg_overlay(const TrajectoryPack& pack) {
  std::string s;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%u\" height=\"%u\" "
                "viewBox=\"0 0 %u %u\">\n",
                pack.width, pack.height, pack.width, pack.height);
  s += buf;
  std::map<std::uint32_t, std::vector<const Trajectory*>> by_anchor;
  for (const auto& at : pack.trajectories) by_anchor[at.anchor_frame].push_back(&at.trajectory);
  for (const auto& [anchor, trajs] : by_anchor) {
    std::snprintf(buf, sizeof buf, "<g id=\"anchor-%u\">\n", anchor);
    s += buf;
    for (const auto* t : trajs) {
      const int steps = t->length();
      for (int i = 0; i < steps; ++i) {
        const Rgb c = step_color(i, steps);
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.3f\" y1=\"%.3f\" x2=\"%.3f\" y2=\"%.3f\" "
                      "stroke=\"rgb(%d,%d,%d)\" stroke-width=\"0.5\"%s/>\n",
                      t->points[i].x, t->points[i].y, t->points[i + 1].x, t->points[i + 1].y,
                      static_cast<int>(std::lround(c[0])), static_cast<int>(std::lround(c[1])),
                      static_cast<int>(std::lround(c[2])),
                      t->valid ? "" : " stroke-dasharray=\"2,2\"");
        s += buf;
      }
    }
    s += "</g>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace m3v
