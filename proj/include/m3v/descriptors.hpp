#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "m3v/error.hpp"
#include "m3v/flow.hpp"
#include "m3v/image.hpp"

namespace m3v {

inline constexpr int kOrientationBins = 9;
inline constexpr int kDefaultCellRadius = 8;

using Histogram = std::array<double, kOrientationBins>;

// Nine unsigned-orientation bins centered at 0, 20, ..., 160 degrees.
struct OrientationHistogram {
  Histogram bins{};
  int cell_radius = kDefaultCellRadius;
};

// Dense 2-vector field sampled on the pixel grid (gradients or flow).
struct VectorField {
  int width = 0;
  int height = 0;
  std::vector<double> x;
  std::vector<double> y;

  double gx(int c, int r) const { return x[static_cast<std::size_t>(r) * width + c]; }
  double gy(int c, int r) const { return y[static_cast<std::size_t>(r) * width + c]; }
};

namespace detail {

// Nearest pixel for a sub-pixel center inside [0, W) x [0, H).
inline std::pair<int, int> histogram_center(int width, int height, Point center) {
  if (!(center.x >= 0.0 && center.x < width && center.y >= 0.0 && center.y < height)) {
    throw InvalidArgument("histogram center outside the image");
  }
  const int cx = std::min(static_cast<int>(std::lround(center.x)), width - 1);
  const int cy = std::min(static_cast<int>(std::lround(center.y)), height - 1);
  return {cx, cy};
}

inline void normalize_l1(Histogram& h) {
  double total = 0.0;
  for (double b : h) total += b;
  if (total < 1e-6) {
    h.fill(0.0);
    return;
  }
  for (double& b : h) b /= total;
}

}  // namespace detail

// Magnitude-weighted histogram of vector orientations over the
// (2r+1)^2 window around `center`, edge replicated, orientations folded to
// [0, 180) and split linearly between the two nearest bin centers. The
// result is L1 normalized; near-zero total energy gives the zero vector.
// `vec_at(col, row)` returns the vector at an in-bounds pixel.
template <typename VecAt>
OrientationHistogram accumulate_orientations(int width, int height, Point center,
                                             int cell_radius, VecAt&& vec_at) {
  if (cell_radius < 1) throw InvalidArgument("cell_radius must be >= 1");
  if (width <= 0 || height <= 0) throw InvalidArgument("empty vector field");
  const auto [cx, cy] = detail::histogram_center(width, height, center);
  constexpr double kBinWidth = std::numbers::pi / kOrientationBins;

  OrientationHistogram out;
  out.cell_radius = cell_radius;
  for (int dy = -cell_radius; dy <= cell_radius; ++dy) {
    const int r = std::clamp(cy + dy, 0, height - 1);
    for (int dx = -cell_radius; dx <= cell_radius; ++dx) {
      const int c = std::clamp(cx + dx, 0, width - 1);
      const auto [gx, gy] = vec_at(c, r);
      const double mag = std::hypot(gx, gy);
      if (mag == 0.0) continue;
      double theta = std::atan2(gy, gx);
      if (theta < 0.0) theta += std::numbers::pi;
      if (theta >= std::numbers::pi) theta -= std::numbers::pi;
      const double pos = theta / kBinWidth;
      const int lo = static_cast<int>(std::floor(pos));
      const double frac = pos - lo;
      out.bins[lo % kOrientationBins] += mag * (1.0 - frac);
      out.bins[(lo + 1) % kOrientationBins] += mag * frac;
    }
  }
  detail::normalize_l1(out.bins);
  return out;
}

inline OrientationHistogram orientation_histogram(const VectorField& field, Point center,
                                                  int cell_radius = kDefaultCellRadius) {
  return accumulate_orientations(field.width, field.height, center, cell_radius,
                                 [&](int c, int r) {
                                   return std::pair{field.gx(c, r), field.gy(c, r)};
                                 });
}

// [-1, 0, 1] derivative of an edge-replicated plane, evaluated on demand.
inline std::pair<double, double> centered_gradient(const std::vector<double>& plane, int width,
                                                   int height, int c, int r) {
  auto at = [&](int cc, int rr) {
    return plane[static_cast<std::size_t>(std::clamp(rr, 0, height - 1)) * width +
                 std::clamp(cc, 0, width - 1)];
  };
  return {at(c + 1, r) - at(c - 1, r), at(c, r + 1) - at(c, r - 1)};
}

// Centered [-1, 0, 1] differences with edge replication.
inline VectorField image_gradients(const Frame& frame) {
  if (frame.channels() != 1) throw InvalidArgument("image_gradients expects a grayscale frame");
  VectorField g{frame.width(), frame.height(), {}, {}};
  g.x.resize(frame.size());
  g.y.resize(frame.size());
  for (int r = 0; r < frame.height(); ++r) {
    for (int c = 0; c < frame.width(); ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * frame.width() + c;
      g.x[i] = frame.clamped(c + 1, r) - frame.clamped(c - 1, r);
      g.y[i] = frame.clamped(c, r + 1) - frame.clamped(c, r - 1);
    }
  }
  return g;
}

inline VectorField component_gradients(const std::vector<double>& plane, int width, int height) {
  VectorField g{width, height, {}, {}};
  g.x.resize(plane.size());
  g.y.resize(plane.size());
  auto at = [&](int c, int r) {
    return plane[static_cast<std::size_t>(std::clamp(r, 0, height - 1)) * width +
                 std::clamp(c, 0, width - 1)];
  };
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * width + c;
      g.x[i] = at(c + 1, r) - at(c - 1, r);
      g.y[i] = at(c, r + 1) - at(c, r - 1);
    }
  }
  return g;
}

inline VectorField as_vector_field(const FlowField& flow) {
  return {flow.width(), flow.height(), flow.u_data(), flow.v_data()};
}

// Shape descriptor at one point of a grayscale frame.
// Gradients are evaluated only inside the window.
inline OrientationHistogram hog_at(const Frame& frame, Point point,
                                   int cell_radius = kDefaultCellRadius) {
  if (frame.channels() != 1) throw InvalidArgument("hog_at expects a grayscale frame");
  return accumulate_orientations(frame.width(), frame.height(), point, cell_radius,
                                 [&](int c, int r) {
                                   return centered_gradient(frame.data(), frame.width(),
                                                            frame.height(), c, r);
                                 });
}

struct MotionHistograms {
  OrientationHistogram hof;
  OrientationHistogram mbh_x;
  OrientationHistogram mbh_y;
};

// Flow-orientation histogram plus the motion-boundary histograms of the
// spatial gradients of u and of v.
inline MotionHistograms motion_histograms(const FlowField& flow, Point point,
                                          int cell_radius = kDefaultCellRadius) {
  const int w = flow.width();
  const int h = flow.height();
  return {accumulate_orientations(w, h, point, cell_radius,
                                  [&](int c, int r) { return std::pair{flow.u(c, r), flow.v(c, r)}; }),
          accumulate_orientations(w, h, point, cell_radius,
                                  [&](int c, int r) {
                                    return centered_gradient(flow.u_data(), w, h, c, r);
                                  }),
          accumulate_orientations(w, h, point, cell_radius, [&](int c, int r) {
            return centered_gradient(flow.v_data(), w, h, c, r);
          })};
}

}  // namespace m3v
