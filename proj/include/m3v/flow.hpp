#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "m3v/binary_io.hpp"
#include "m3v/error.hpp"
#include "m3v/image.hpp"

namespace m3v {

// Dense displacement field in pixels/frame. u is horizontal, v vertical.
class FlowField {
 public:
  FlowField() = default;
  FlowField(int width, int height) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw InvalidArgument("flow dimensions must be positive");
    u_.assign(static_cast<std::size_t>(width) * height, 0.0);
    v_.assign(u_.size(), 0.0);
  }
  FlowField(int width, int height, double u, double v) : FlowField(width, height) {
    std::fill(u_.begin(), u_.end(), u);
    std::fill(v_.begin(), v_.end(), v);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return u_.size(); }

  double& u(int x, int y) { return u_[idx(x, y)]; }
  double& v(int x, int y) { return v_[idx(x, y)]; }
  double u(int x, int y) const { return u_[idx(x, y)]; }
  double v(int x, int y) const { return v_[idx(x, y)]; }

  std::vector<double>& u_data() noexcept { return u_; }
  std::vector<double>& v_data() noexcept { return v_; }
  const std::vector<double>& u_data() const noexcept { return u_; }
  const std::vector<double>& v_data() const noexcept { return v_; }

  // Bilinear sample with edge replication; exact for spatially constant fields.
  Point sample(Point p) const {
    const double x = std::clamp(p.x, 0.0, static_cast<double>(width_ - 1));
    const double y = std::clamp(p.y, 0.0, static_cast<double>(height_ - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, width_ - 1);
    const int y1 = std::min(y0 + 1, height_ - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    // a + f * (b - a) returns a exactly when a == b, so constant fields
    // are sampled without rounding.
    auto lerp = [&](const std::vector<double>& c) {
      const double a = c[idx(x0, y0)], b = c[idx(x1, y0)];
      const double d = c[idx(x0, y1)], e = c[idx(x1, y1)];
      const double top = a + fx * (b - a);
      const double bot = d + fx * (e - d);
      return top + fy * (bot - top);
    };
    return {lerp(u_), lerp(v_)};
  }

  friend bool operator==(const FlowField&, const FlowField&) = default;

 private:
  std::size_t idx(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> u_;
  std::vector<double> v_;
};

struct FlowParams {
  int pyramid_levels = 4;
  double pyramid_scale = 0.5;
  int window_radius = 7;
  int iterations_per_level = 3;
  double polynomial_sigma = 1.5;
  double flow_bound = 20.0;

  void validate() const {
    if (pyramid_levels < 1) throw InvalidArgument("pyramid_levels must be >= 1");
    if (!(pyramid_scale > 0.0 && pyramid_scale < 1.0)) {
      throw InvalidArgument("pyramid_scale must lie in (0, 1)");
    }
    if (window_radius < 1) throw InvalidArgument("window_radius must be >= 1");
    if (iterations_per_level < 1) throw InvalidArgument("iterations_per_level must be >= 1");
    if (!(polynomial_sigma > 0.0)) throw InvalidArgument("polynomial_sigma must be positive");
    if (!(flow_bound > 0.0)) throw InvalidArgument("flow_bound must be positive");
  }
};

inline void clamp_flow(FlowField& flow, double bound) {
  for (auto& x : flow.u_data()) x = std::clamp(x, -bound, bound);
  for (auto& x : flow.v_data()) x = std::clamp(x, -bound, bound);
}

namespace detail {

// Single-channel working image for the flow internals.
struct Plane {
  int w = 0;
  int h = 0;
  std::vector<double> d;

  Plane() = default;
  Plane(int w_, int h_, double fill = 0.0)
      : w(w_), h(h_), d(static_cast<std::size_t>(w_) * h_, fill) {}

  double& operator()(int x, int y) { return d[static_cast<std::size_t>(y) * w + x]; }
  double operator()(int x, int y) const { return d[static_cast<std::size_t>(y) * w + x]; }
  double clamped(int x, int y) const {
    return (*this)(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1));
  }
  double bilinear(double x, double y) const {
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0;
    const double fy = y - y0;
    return (clamped(x0, y0) * (1.0 - fx) + clamped(x0 + 1, y0) * fx) * (1.0 - fy) +
           (clamped(x0, y0 + 1) * (1.0 - fx) + clamped(x0 + 1, y0 + 1) * fx) * fy;
  }
};

inline Plane plane_from(const Frame& f) {
  if (f.channels() != 1) throw InvalidArgument("flow expects grayscale frames");
  Plane p(f.width(), f.height());
  p.d = f.data();
  return p;
}

inline std::vector<double> gaussian_kernel(double sigma, int radius) {
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& x : k) x /= sum;
  return k;
}

// Separable convolution with edge replication.
inline Plane convolve_separable(const Plane& src, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size() / 2);
  Plane tmp(src.w, src.h);
  for (int y = 0; y < src.h; ++y) {
    for (int x = 0; x < src.w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * src.clamped(x + i, y);
      tmp(x, y) = acc;
    }
  }
  Plane out(src.w, src.h);
  for (int y = 0; y < src.h; ++y) {
    for (int x = 0; x < src.w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.clamped(x, y + i);
      out(x, y) = acc;
    }
  }
  return out;
}

inline Plane gaussian_blur(const Plane& src, double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  return convolve_separable(src, gaussian_kernel(sigma, radius));
}

inline Plane resize_bilinear(const Plane& src, int w, int h) {
  Plane out(w, h);
  const double sx = static_cast<double>(src.w) / w;
  const double sy = static_cast<double>(src.h) / h;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      out(x, y) = src.bilinear((x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
    }
  }
  return out;
}

// Per-pixel quadratic model f(p + o) ~ o'Ao + b'o + c fitted by Gaussian
// weighted least squares over a (2n+1)^2 neighbourhood.
struct PolyExpansion {
  Plane bx, by, axx, ayy, axy;  // A = [[axx, axy/2], [axy/2, ayy]], b = [bx, by]
};

inline PolyExpansion polynomial_expansion(const Plane& img, double sigma) {
  const int n = std::max(1, static_cast<int>(std::lround(2.0 * sigma)));
  const int side = 2 * n + 1;
  const int taps = side * side;

  // Rows of G^-1 B' W: one correlation kernel per basis coefficient.
  Eigen::MatrixXd basis(taps, 6);
  Eigen::VectorXd weight(taps);
  for (int dy = -n, t = 0; dy <= n; ++dy) {
    for (int dx = -n; dx <= n; ++dx, ++t) {
      basis.row(t) << 1.0, dx, dy, dx * dx, dy * dy, dx * dy;
      weight(t) = std::exp(-0.5 * (dx * dx + dy * dy) / (sigma * sigma));
    }
  }
  const Eigen::MatrixXd weighted = weight.asDiagonal() * basis;
  const Eigen::MatrixXd gram = basis.transpose() * weighted;
  const Eigen::MatrixXd kernels = gram.ldlt().solve(weighted.transpose());  // 6 x taps

  PolyExpansion e{Plane(img.w, img.h), Plane(img.w, img.h), Plane(img.w, img.h),
                  Plane(img.w, img.h), Plane(img.w, img.h)};
  std::vector<double> patch(taps);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      for (int dy = -n, t = 0; dy <= n; ++dy) {
        for (int dx = -n; dx <= n; ++dx, ++t) patch[t] = img.clamped(x + dx, y + dy);
      }
      double r[6] = {0, 0, 0, 0, 0, 0};
      for (int k = 1; k < 6; ++k) {
        double acc = 0.0;
        for (int t = 0; t < taps; ++t) acc += kernels(k, t) * patch[t];
        r[k] = acc;
      }
      e.bx(x, y) = r[1];
      e.by(x, y) = r[2];
      e.axx(x, y) = r[3];
      e.ayy(x, y) = r[4];
      e.axy(x, y) = r[5];
    }
  }
  return e;
}

// One displacement update at a single pyramid level. `flow_u/flow_v` carry
// the current estimate in and the refined estimate out.
inline void farneback_update(const PolyExpansion& e1, const PolyExpansion& e2, Plane& flow_u,
                             Plane& flow_v, const std::vector<double>& window) {
  const int w = e1.bx.w;
  const int h = e1.bx.h;
  Plane g11(w, h), g12(w, h), g22(w, h), h1(w, h), h2(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = flow_u(x, y);
      const double dy = flow_v(x, y);
      const double sx = x + dx;
      const double sy = y + dy;
      const double a11 = 0.5 * (e1.axx(x, y) + e2.axx.bilinear(sx, sy));
      const double a22 = 0.5 * (e1.ayy(x, y) + e2.ayy.bilinear(sx, sy));
      const double a12 = 0.25 * (e1.axy(x, y) + e2.axy.bilinear(sx, sy));
      const double db1 = -0.5 * (e2.bx.bilinear(sx, sy) - e1.bx(x, y)) + a11 * dx + a12 * dy;
      const double db2 = -0.5 * (e2.by.bilinear(sx, sy) - e1.by(x, y)) + a12 * dx + a22 * dy;
      g11(x, y) = a11 * a11 + a12 * a12;
      g12(x, y) = a12 * (a11 + a22);
      g22(x, y) = a12 * a12 + a22 * a22;
      h1(x, y) = a11 * db1 + a12 * db2;
      h2(x, y) = a12 * db1 + a22 * db2;
    }
  }
  g11 = convolve_separable(g11, window);
  g12 = convolve_separable(g12, window);
  g22 = convolve_separable(g22, window);
  h1 = convolve_separable(h1, window);
  h2 = convolve_separable(h2, window);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double det = g11(x, y) * g22(x, y) - g12(x, y) * g12(x, y) + 1e-3;
      flow_u(x, y) = (g22(x, y) * h1(x, y) - g12(x, y) * h2(x, y)) / det;
      flow_v(x, y) = (g11(x, y) * h2(x, y) - g12(x, y) * h1(x, y)) / det;
    }
  }
}

}  // namespace detail

// Coarse-to-fine dense flow by quadratic polynomial expansion
// (Farneback). The result is clamped to +-flow_bound per component.
inline FlowField compute_dense_flow(const Frame& prev, const Frame& next,
                                    const FlowParams& params = {}) {
  params.validate();
  if (prev.channels() != 1 || next.channels() != 1) {
    throw InvalidArgument("compute_dense_flow expects grayscale frames");
  }
  if (!prev.same_shape(next)) throw InvalidArgument("compute_dense_flow: frame size mismatch");
  const int min_side = 2 * params.window_radius + 1;
  if (prev.width() < min_side || prev.height() < min_side) {
    throw InvalidArgument("compute_dense_flow: frame smaller than the averaging window");
  }

  const detail::Plane base1 = detail::plane_from(prev);
  const detail::Plane base2 = detail::plane_from(next);

  // Coarser levels whose short side drops below 8 pixels carry no usable
  // structure for a 2nd-order fit and are skipped.
  struct Level {
    int w, h;
  };
  std::vector<Level> levels;
  double scale = 1.0;
  for (int k = 0; k < params.pyramid_levels; ++k) {
    const int w = static_cast<int>(std::lround(prev.width() * scale));
    const int h = static_cast<int>(std::lround(prev.height() * scale));
    if (k > 0 && std::min(w, h) < 8) break;
    levels.push_back({w, h});
    scale *= params.pyramid_scale;
  }

  const auto window = detail::gaussian_kernel(0.5 * params.window_radius, params.window_radius);
  detail::Plane fu, fv;
  for (int k = static_cast<int>(levels.size()) - 1; k >= 0; --k) {
    const auto [w, h] = levels[k];
    detail::Plane img1 = base1, img2 = base2;
    if (k > 0) {
      const double s = static_cast<double>(w) / prev.width();
      const double sigma = (1.0 / s - 1.0) * 0.5;
      img1 = detail::resize_bilinear(detail::gaussian_blur(base1, sigma), w, h);
      img2 = detail::resize_bilinear(detail::gaussian_blur(base2, sigma), w, h);
    }
    if (fu.d.empty()) {
      fu = detail::Plane(w, h);
      fv = detail::Plane(w, h);
    } else {
      const double rx = static_cast<double>(w) / fu.w;
      const double ry = static_cast<double>(h) / fu.h;
      fu = detail::resize_bilinear(fu, w, h);
      fv = detail::resize_bilinear(fv, w, h);
      for (auto& x : fu.d) x *= rx;
      for (auto& x : fv.d) x *= ry;
    }
    const auto e1 = detail::polynomial_expansion(img1, params.polynomial_sigma);
    const auto e2 = detail::polynomial_expansion(img2, params.polynomial_sigma);
    for (int it = 0; it < params.iterations_per_level; ++it) {
      detail::farneback_update(e1, e2, fu, fv, window);
    }
  }

  FlowField out(prev.width(), prev.height());
  out.u_data() = std::move(fu.d);
  out.v_data() = std::move(fv.d);
  clamp_flow(out, params.flow_bound);
  return out;
}

// 3x3 median per component, edge replicated.
inline FlowField median_filter_flow(const FlowField& flow) {
  FlowField out(flow.width(), flow.height());
  const int w = flow.width();
  const int h = flow.height();
  auto filter = [&](const std::vector<double>& src, std::vector<double>& dst) {
    std::array<double, 9> nb;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = std::clamp(y + dy, 0, h - 1);
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = std::clamp(x + dx, 0, w - 1);
            nb[n++] = src[static_cast<std::size_t>(yy) * w + xx];
          }
        }
        std::nth_element(nb.begin(), nb.begin() + 4, nb.end());
        dst[static_cast<std::size_t>(y) * w + x] = nb[4];
      }
    }
  };
  filter(flow.u_data(), out.u_data());
  filter(flow.v_data(), out.v_data());
  return out;
}

// ---------------------------------------------------------------------------
// Camera motion compensation

// Planar projective map, stored row-major with element (2,2) == 1.
class Homography {
 public:
  Homography() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}
  explicit Homography(const std::array<double, 9>& m) : m_(m) {
    if (std::abs(m_[8]) < 1e-12) throw InvalidArgument("homography with vanishing h33");
    for (auto& x : m_) x /= m[8];
    if (std::abs(determinant()) <= 1e-9) throw InvalidArgument("singular homography");
  }

  static Homography translation(double tx, double ty) {
    return Homography({1, 0, tx, 0, 1, ty, 0, 0, 1});
  }

  double operator()(int r, int c) const { return m_[3 * r + c]; }
  const std::array<double, 9>& data() const noexcept { return m_; }

  Point apply(Point p) const {
    const double w = m_[6] * p.x + m_[7] * p.y + m_[8];
    return {(m_[0] * p.x + m_[1] * p.y + m_[2]) / w, (m_[3] * p.x + m_[4] * p.y + m_[5]) / w};
  }

  double determinant() const {
    return m_[0] * (m_[4] * m_[8] - m_[5] * m_[7]) - m_[1] * (m_[3] * m_[8] - m_[5] * m_[6]) +
           m_[2] * (m_[3] * m_[7] - m_[4] * m_[6]);
  }

  Homography inverse() const {
    Eigen::Matrix3d m;
    m << m_[0], m_[1], m_[2], m_[3], m_[4], m_[5], m_[6], m_[7], m_[8];
    const Eigen::Matrix3d inv = m.inverse();
    std::array<double, 9> out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out[3 * r + c] = inv(r, c);
    return Homography(out);
  }

 private:
  std::array<double, 9> m_;
};

struct Correspondence {
  Point from;  // in prev
  Point to;    // in next
};

struct CameraMotionParams {
  int max_corners = 400;
  double harris_k = 0.04;
  double quality = 0.01;     // fraction of the strongest response
  int min_distance = 4;
  int block_radius = 5;      // 11x11 ZNCC blocks
  double min_zncc = 0.8;
  double inlier_threshold = 2.0;
  int ransac_iterations = 500;
  double ransac_confidence = 0.99;
  std::size_t min_inliers = 8;
  std::uint64_t ransac_seed = 0x5eedULL;
};

// Harris corners, strongest first, separated by at least min_distance and
// far enough from the border for a full matching block.
inline std::vector<Point> detect_harris_corners(const Frame& frame, const CameraMotionParams& cp) {
  const detail::Plane img = detail::plane_from(frame);
  detail::Plane ixx(img.w, img.h), iyy(img.w, img.h), ixy(img.w, img.h);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const double gx = 0.5 * (img.clamped(x + 1, y) - img.clamped(x - 1, y));
      const double gy = 0.5 * (img.clamped(x, y + 1) - img.clamped(x, y - 1));
      ixx(x, y) = gx * gx;
      iyy(x, y) = gy * gy;
      ixy(x, y) = gx * gy;
    }
  }
  ixx = detail::gaussian_blur(ixx, 1.5);
  iyy = detail::gaussian_blur(iyy, 1.5);
  ixy = detail::gaussian_blur(ixy, 1.5);
  detail::Plane resp(img.w, img.h);
  double max_r = 0.0;
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const double det = ixx(x, y) * iyy(x, y) - ixy(x, y) * ixy(x, y);
      const double tr = ixx(x, y) + iyy(x, y);
      resp(x, y) = det - cp.harris_k * tr * tr;
      max_r = std::max(max_r, resp(x, y));
    }
  }
  if (max_r <= 1e-9) return {};

  struct Cand {
    double r;
    int x, y;
  };
  std::vector<Cand> cands;
  const int margin = cp.block_radius + 1;
  for (int y = margin; y < img.h - margin; ++y) {
    for (int x = margin; x < img.w - margin; ++x) {
      const double r = resp(x, y);
      if (r < cp.quality * max_r) continue;
      bool peak = true;
      for (int dy = -1; dy <= 1 && peak; ++dy)
        for (int dx = -1; dx <= 1 && peak; ++dx)
          if ((dx || dy) && resp(x + dx, y + dy) > r) peak = false;
      if (peak) cands.push_back({r, x, y});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.r != b.r) return a.r > b.r;
    return a.y != b.y ? a.y < b.y : a.x < b.x;
  });
  std::vector<Point> out;
  const double min_d2 = static_cast<double>(cp.min_distance) * cp.min_distance;
  for (const auto& c : cands) {
    if (static_cast<int>(out.size()) >= cp.max_corners) break;
    const Point p{static_cast<double>(c.x), static_cast<double>(c.y)};
    const bool far = std::none_of(out.begin(), out.end(), [&](const Point& q) {
      const Point d = p - q;
      return d.x * d.x + d.y * d.y < min_d2;
    });
    if (far) out.push_back(p);
  }
  return out;
}

// Zero-mean normalized cross-correlation block matching of each corner of
// prev into next within +-search_radius, refined to sub-pixel by a 1D
// parabola fit per axis.
inline std::vector<Correspondence> match_corners_zncc(const Frame& prev, const Frame& next,
                                                      const std::vector<Point>& corners,
                                                      int search_radius,
                                                      const CameraMotionParams& cp) {
  const int r = cp.block_radius;
  const int side = 2 * r + 1;
  const int n = side * side;
  const int w = prev.width();
  const int h = prev.height();
  std::vector<Correspondence> out;
  std::vector<double> tpl(n), cand(n);
  for (const auto& c : corners) {
    const int cx = static_cast<int>(c.x);
    const int cy = static_cast<int>(c.y);
    double mean = 0.0;
    for (int dy = -r, t = 0; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx, ++t) mean += (tpl[t] = prev.at(cx + dx, cy + dy));
    mean /= n;
    double var = 0.0;
    for (auto& v : tpl) {
      v -= mean;
      var += v * v;
    }
    if (var < 1e-6 * n) continue;

    const int span = 2 * search_radius + 1;
    std::vector<double> score(static_cast<std::size_t>(span) * span,
                              -std::numeric_limits<double>::infinity());
    double best = -2.0;
    int best_dx = 0, best_dy = 0;
    for (int sy = -search_radius; sy <= search_radius; ++sy) {
      const int ny = cy + sy;
      if (ny - r < 0 || ny + r >= h) continue;
      for (int sx = -search_radius; sx <= search_radius; ++sx) {
        const int nx = cx + sx;
        if (nx - r < 0 || nx + r >= w) continue;
        double m2 = 0.0;
        for (int dy = -r, t = 0; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx, ++t) m2 += (cand[t] = next.at(nx + dx, ny + dy));
        m2 /= n;
        double cross = 0.0, var2 = 0.0;
        for (int t = 0; t < n; ++t) {
          const double v = cand[t] - m2;
          cross += tpl[t] * v;
          var2 += v * v;
        }
        const double z = var2 > 1e-12 ? cross / std::sqrt(var * var2) : -1.0;
        score[static_cast<std::size_t>(sy + search_radius) * span + (sx + search_radius)] = z;
        if (z > best) {
          best = z;
          best_dx = sx;
          best_dy = sy;
        }
      }
    }
    if (best < cp.min_zncc) continue;

    auto at = [&](int sx, int sy) {
      if (sx < -search_radius || sx > search_radius || sy < -search_radius || sy > search_radius)
        return -std::numeric_limits<double>::infinity();
      return score[static_cast<std::size_t>(sy + search_radius) * span + (sx + search_radius)];
    };
    auto refine = [](double l, double m, double rr) {
      if (!std::isfinite(l) || !std::isfinite(rr)) return 0.0;
      const double denom = l - 2.0 * m + rr;
      if (std::abs(denom) < 1e-12) return 0.0;
      return std::clamp(0.5 * (l - rr) / denom, -0.5, 0.5);
    };
    const double ox = refine(at(best_dx - 1, best_dy), best, at(best_dx + 1, best_dy));
    const double oy = refine(at(best_dx, best_dy - 1), best, at(best_dx, best_dy + 1));
    out.push_back({c, {c.x + best_dx + ox, c.y + best_dy + oy}});
  }
  return out;
}

namespace detail {

// Normalized DLT over >= 4 correspondences.
inline std::optional<Homography> solve_homography_dlt(const std::vector<Correspondence>& m) {
  if (m.size() < 4) return std::nullopt;
  auto normalizer = [&](bool src) {
    double mx = 0, my = 0;
    for (const auto& c : m) {
      const Point p = src ? c.from : c.to;
      mx += p.x;
      my += p.y;
    }
    mx /= m.size();
    my /= m.size();
    double dist = 0;
    for (const auto& c : m) {
      const Point p = src ? c.from : c.to;
      dist += std::hypot(p.x - mx, p.y - my);
    }
    dist /= m.size();
    const double s = dist > 1e-12 ? std::sqrt(2.0) / dist : 1.0;
    Eigen::Matrix3d t;
    t << s, 0, -s * mx, 0, s, -s * my, 0, 0, 1;
    return t;
  };
  const Eigen::Matrix3d t1 = normalizer(true);
  const Eigen::Matrix3d t2 = normalizer(false);
  Eigen::MatrixXd a(2 * m.size(), 9);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const Eigen::Vector3d p = t1 * Eigen::Vector3d(m[i].from.x, m[i].from.y, 1.0);
    const Eigen::Vector3d q = t2 * Eigen::Vector3d(m[i].to.x, m[i].to.y, 1.0);
    const double x = p.x() / p.z(), y = p.y() / p.z();
    const double u = q.x() / q.z(), v = q.y() / q.z();
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd hv = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
  const Eigen::Matrix3d hm = t2.inverse() * hn * t1;
  if (std::abs(hm(2, 2)) < 1e-12) return std::nullopt;
  std::array<double, 9> out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[3 * r + c] = hm(r, c);
  try {
    return Homography(out);
  } catch (const InvalidArgument&) {
    return std::nullopt;
  }
}

inline double transfer_error(const Homography& h, const Correspondence& c) {
  const Point p = h.apply(c.from);
  return std::hypot(p.x - c.to.x, p.y - c.to.y);
}

inline bool collinear(const Point& a, const Point& b, const Point& c) {
  return std::abs((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)) < 1e-6;
}

}  // namespace detail

struct HomographyFit {
  Homography homography;
  std::vector<std::size_t> inliers;
};

// RANSAC over 4-point DLT samples, followed by a least-squares refit on the
// consensus set. Exits early once the sample count reaches the confidence
// bound for the current inlier ratio.
inline std::optional<HomographyFit> ransac_homography(const std::vector<Correspondence>& matches,
                                                      const CameraMotionParams& cp) {
  if (matches.size() < 4) return std::nullopt;
  std::mt19937_64 rng(cp.ransac_seed);
  std::uniform_int_distribution<std::size_t> pick(0, matches.size() - 1);
  std::optional<HomographyFit> best;
  auto consensus = [&](const Homography& h) {
    std::vector<std::size_t> in;
    for (std::size_t i = 0; i < matches.size(); ++i)
      if (detail::transfer_error(h, matches[i]) < cp.inlier_threshold) in.push_back(i);
    return in;
  };

  double needed = cp.ransac_iterations;
  for (int it = 0; it < cp.ransac_iterations && it < needed; ++it) {
    std::array<std::size_t, 4> idx;
    for (int k = 0; k < 4; ++k) {
      bool dup = true;
      while (dup) {
        idx[k] = pick(rng);
        dup = std::find(idx.begin(), idx.begin() + k, idx[k]) != idx.begin() + k;
      }
    }
    std::vector<Correspondence> sample;
    for (auto i : idx) sample.push_back(matches[i]);
    bool degenerate = false;
    for (int a = 0; a < 4 && !degenerate; ++a)
      for (int b = a + 1; b < 4 && !degenerate; ++b)
        for (int c = b + 1; c < 4 && !degenerate; ++c)
          degenerate = detail::collinear(sample[a].from, sample[b].from, sample[c].from) ||
                       detail::collinear(sample[a].to, sample[b].to, sample[c].to);
    if (degenerate) continue;
    auto h = detail::solve_homography_dlt(sample);
    if (!h) continue;
    auto in = consensus(*h);
    if (!best || in.size() > best->inliers.size()) {
      best = HomographyFit{*h, std::move(in)};
      const double ratio = static_cast<double>(best->inliers.size()) / matches.size();
      const double p_all = std::pow(ratio, 4.0);
      if (p_all >= 1.0 - 1e-12) {
        needed = 0;
      } else if (p_all > 0.0) {
        needed = std::log(1.0 - cp.ransac_confidence) / std::log(1.0 - p_all);
      }
    }
  }
  if (!best || best->inliers.size() < 4) return best;

  std::vector<Correspondence> support;
  for (auto i : best->inliers) support.push_back(matches[i]);
  if (auto refit = detail::solve_homography_dlt(support)) {
    auto in = consensus(*refit);
    if (in.size() >= best->inliers.size()) best = HomographyFit{*refit, std::move(in)};
  }
  return best;
}

// next sampled at H(p): brings next into prev's camera frame.
inline Frame warp_to_reference(const Frame& next, const Homography& prev_to_next) {
  Frame out(next.width(), next.height(), next.channels());
  for (int y = 0; y < next.height(); ++y) {
    for (int x = 0; x < next.width(); ++x) {
      const Point q = prev_to_next.apply({static_cast<double>(x), static_cast<double>(y)});
      for (int c = 0; c < next.channels(); ++c) out.at(x, y, c) = next.bilinear(q.x, q.y, c);
    }
  }
  return out;
}

struct CompensatedFlow {
  FlowField flow;
  Homography homography;  // prev -> next camera motion; identity on fallback
  bool fallback = false;  // true when too few matches/inliers to estimate it
  std::size_t matches = 0;
  std::size_t inliers = 0;
};

// Flow with global camera motion removed: estimate a homography from
// corner matches, rectify next into prev's frame and recompute the flow.
inline CompensatedFlow compensate_camera_motion(const Frame& prev, const Frame& next,
                                                const FlowParams& params = {},
                                                const CameraMotionParams& cp = {}) {
  params.validate();
  if (prev.channels() != 1 || next.channels() != 1) {
    throw InvalidArgument("compensate_camera_motion expects grayscale frames");
  }
  if (!prev.same_shape(next)) throw InvalidArgument("compensate_camera_motion: size mismatch");
  if (prev.width() < 32 || prev.height() < 32) {
    throw InvalidArgument("compensate_camera_motion needs frames of at least 32x32");
  }
  CompensatedFlow out;
  const auto corners = detect_harris_corners(prev, cp);
  const auto matches = match_corners_zncc(
      prev, next, corners, static_cast<int>(std::lround(params.flow_bound)), cp);
  out.matches = matches.size();
  std::optional<HomographyFit> fit;
  if (matches.size() >= cp.min_inliers) fit = ransac_homography(matches, cp);
  if (!fit || fit->inliers.size() < cp.min_inliers) {
    out.inliers = fit ? fit->inliers.size() : 0;
    out.fallback = true;
    out.flow = compute_dense_flow(prev, next, params);
    return out;
  }
  out.inliers = fit->inliers.size();
  out.homography = fit->homography;
  out.flow = compute_dense_flow(prev, warp_to_reference(next, fit->homography), params);
  return out;
}

// ---------------------------------------------------------------------------
// .flo2 dump: "M3FL", u16 version, u32 width, u32 height, f32 u plane, f32 v plane.

inline Bytes encode_flo2(const FlowField& flow) {
  ByteWriter w;
  w.raw("M3FL");
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(flow.width()));
  w.u32(static_cast<std::uint32_t>(flow.height()));
  for (double x : flow.u_data()) w.f32(static_cast<float>(x));
  for (double x : flow.v_data()) w.f32(static_cast<float>(x));
  return std::move(w).bytes();
}

inline FlowField decode_flo2(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("M3FL");
  r.expect_version(1);
  const auto dim_at = r.offset();
  const auto w = r.u32();
  const auto h = r.u32();
  if (w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16)) {
    throw FormatError(FormatErrorKind::kMalformed, dim_at, "implausible flow dimensions");
  }
  FlowField f(static_cast<int>(w), static_cast<int>(h));
  for (auto& x : f.u_data()) x = r.f32();
  for (auto& x : f.v_data()) x = r.f32();
  return f;
}

}  // namespace m3v
