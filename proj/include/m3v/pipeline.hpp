#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "m3v/descriptors.hpp"
#include "m3v/error.hpp"
#include "m3v/flow.hpp"
#include "m3v/image.hpp"
#include "m3v/parallel.hpp"
#include "m3v/targets.hpp"
#include "m3v/trajectories.hpp"

namespace m3v {

struct PipelineOptions {
  FlowParams flow;
  CameraMotionParams camera;
  bool compensate_camera = false;
  PatchShape patch;
  TargetConfig target;
  MaskType mask_type = MaskType::kTube;
  double mask_ratio = 0.7;
  std::uint64_t mask_seed = 0;
  int s_rgb = 2;
  int offset = 0;
  bool interpolate = false;
  // Emit targets for every patch instead of only the masked ones.
  bool all_patches = false;
  int threads = 1;
};

// Flow from raw frame `a` to raw frame `b` of the grayscale video.
using FlowProvider = std::function<FlowField(int a, int b)>;

struct ClipTargets {
  PatchGrid grid;
  MaskMap mask;
  SamplingPlan plan;
  TargetFile file;
  TrajectoryPack pack;
  std::size_t trajectories = 0;
  std::size_t invalid = 0;
  std::size_t flow_pairs = 0;
  std::size_t compensation_fallbacks = 0;

  double invalid_fraction() const {
    return trajectories ? static_cast<double>(invalid) / static_cast<double>(trajectories) : 0.0;
  }
};

// The 16 sampled input frames.
inline FrameSequence input_clip(const FrameSequence& video, const SamplingPlan& plan) {
  std::vector<Frame> frames;
  for (int i : plan.input_indices) frames.push_back(video[i]);
  return FrameSequence(std::move(frames), video.frame_rate());
}

namespace detail {

struct FlowPair {
  int a, b;
  friend auto operator<=>(const FlowPair&, const FlowPair&) = default;
};

inline std::vector<double> patch_pixels(const FrameSequence& clip, const PatchGrid& grid,
                                        std::size_t patch) {
  const auto c = grid.coord(patch);
  const auto& s = grid.shape();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(s.t) * s.h * s.w * clip.channels());
  for (int dt = 0; dt < s.t; ++dt) {
    const Frame& f = clip[c.t * s.t + dt];
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x)
        for (int ch = 0; ch < clip.channels(); ++ch)
          out.push_back(f.at(c.x * s.w + x, c.y * s.h + y, ch));
  }
  return out;
}

inline void append_normalized(std::vector<double>& dst, std::vector<double> part) {
  patch_normalize(part);
  dst.insert(dst.end(), part.begin(), part.end());
}

inline void append_bins(std::vector<double>& dst, const Histogram& h) {
  dst.insert(dst.end(), h.begin(), h.end());
}

}  // namespace detail

// Video -> flows -> trajectories -> per-patch targets for one clip.
// `provider` replaces flow estimation (e.g. with analytic flow); its output
// is clamped to the flow bound like estimated flow.
inline ClipTargets build_clip_targets(const FrameSequence& video, const PipelineOptions& o,
                                      const FlowProvider& provider = {}) {
  o.flow.validate();
  o.target.validate();
  ClipTargets out;
  try {
    out.plan = plan_sampling(static_cast<int>(video.size()), o.s_rgb, o.interpolate, o.offset,
                             o.patch.t);
  } catch (const InvalidArgument& e) {
    throw PipelineError(e.what());
  }
  try {
    out.grid = PatchGrid(kClipLength, video.height(), video.width(), o.patch);
    out.mask = generate_mask(out.grid, o.mask_type, o.mask_ratio, o.mask_seed);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  const auto& plan = out.plan;
  const auto& grid = out.grid;
  const auto& cfg = o.target;
  const int sf = plan.s_flow;
  const bool tracks = uses_trajectories(cfg.kind);

  int needed = plan.input_indices.back() + 1;
  if (tracks) needed = std::max(needed, plan.required_length(cfg.L));
  if (uses_flow(cfg.kind) && !tracks) needed = std::max(needed, plan.anchors.back() + sf + 1);
  if (needed > static_cast<int>(video.size())) {
    throw PipelineError("video has " + std::to_string(video.size()) + " frames but the targets " +
                        "need " + std::to_string(needed) + " (L=" + std::to_string(cfg.L) +
                        ", s_flow=" + std::to_string(sf) + ")");
  }

  const FrameSequence gray = to_grayscale(video);
  const FrameSequence clip = input_clip(video, plan);

  // Flow pairs: L tracking steps per anchor, or one anchor step for the
  // flow-based baselines.
  std::vector<detail::FlowPair> pairs;
  if (uses_flow(cfg.kind)) {
    const int steps = tracks ? cfg.L : 1;
    for (int a : plan.anchors)
      for (int i = 0; i < steps; ++i) pairs.push_back({a + i * sf, a + (i + 1) * sf});
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  }
  std::vector<FlowField> raw(pairs.size()), filtered(pairs.size());
  std::vector<std::uint8_t> fell_back(pairs.size(), 0);
  parallel_for(pairs.size(), o.threads, [&](std::size_t i) {
    const auto [a, b] = pairs[i];
    if (provider) {
      raw[i] = provider(a, b);
      clamp_flow(raw[i], o.flow.flow_bound);
    } else if (o.compensate_camera) {
      auto c = compensate_camera_motion(gray[a], gray[b], o.flow, o.camera);
      fell_back[i] = c.fallback;
      raw[i] = std::move(c.flow);
    } else {
      raw[i] = compute_dense_flow(gray[a], gray[b], o.flow);
    }
    if (raw[i].width() != video.width() || raw[i].height() != video.height()) {
      throw PipelineError("flow field size does not match the video");
    }
    if (tracks) filtered[i] = median_filter_flow(raw[i]);
  });
  out.flow_pairs = pairs.size();
  out.compensation_fallbacks =
      static_cast<std::size_t>(std::count(fell_back.begin(), fell_back.end(), std::uint8_t{1}));
  auto pair_index = [&](int a, int b) {
    const auto it = std::lower_bound(pairs.begin(), pairs.end(), detail::FlowPair{a, b});
    return static_cast<std::size_t>(it - pairs.begin());
  };

  // Median-filtered tracking flows, per temporal patch.
  std::vector<std::vector<FlowField>> anchor_steps(tracks ? plan.anchors.size() : 0);
  for (std::size_t k = 0; k < anchor_steps.size(); ++k) {
    const int a = plan.anchors[k];
    for (int i = 0; i < cfg.L; ++i)
      anchor_steps[k].push_back(filtered[pair_index(a + i * sf, a + (i + 1) * sf)]);
  }
  filtered.clear();

  const std::vector<std::size_t> selected =
      o.all_patches ? [&] {
        std::vector<std::size_t> all(grid.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
      }()
                    : out.mask.masked_indices();

  const std::size_t dim = target_dim(cfg, grid.shape(), video.channels());
  std::vector<PatchTarget> patches(selected.size());
  std::vector<std::vector<AnchoredTrajectory>> tracked(selected.size());

  parallel_for(selected.size(), o.threads, [&](std::size_t n) {
    const std::size_t p = selected[n];
    const auto coord = grid.coord(p);
    const int anchor = plan.anchors[coord.t];
    const auto seeds = seed_points(grid.origin(p), grid.shape().h, grid.shape().w, cfg.K);
    const Frame& mid = gray[plan.input_indices[coord.t * grid.shape().t + grid.shape().t / 2]];

    PatchTarget& pt = patches[n];
    pt.patch_index = static_cast<std::uint32_t>(p);
    pt.validity.assign(cfg.K, 1);
    std::vector<double> values;
    values.reserve(dim);

    auto hog_part = [&] {
      std::vector<double> h;
      for (const auto& s : seeds) detail::append_bins(h, hog_at(mid, s).bins);
      return h;
    };

    if (tracks) {
      const auto& steps = anchor_steps[coord.t];
      std::vector<const Frame*> step_frames;
      for (int i = 0; i < cfg.L; ++i) step_frames.push_back(&gray[anchor + i * sf]);
      std::vector<Trajectory> trajs;
      for (const auto& s : seeds) {
        trajs.push_back(cfg.L > 0 ? track_trajectory(s, steps) : Trajectory{{s}, true});
        tracked[n].push_back({static_cast<std::uint32_t>(anchor), trajs.back()});
      }
      const bool shape = cfg.kind == TargetKind::kTrajectory;
      const auto m = assemble_motion_target(trajs, step_frames, shape);
      pt.validity = m.validity;
      if (shape) {
        values = m.concatenated();
      } else {
        detail::append_normalized(values, hog_part());
        values.insert(values.end(), m.z_p.begin(), m.z_p.end());
      }
    } else if (cfg.kind == TargetKind::kPixel) {
      detail::append_normalized(values, detail::patch_pixels(clip, grid, p));
    } else {
      detail::append_normalized(values, hog_part());
      if (cfg.kind != TargetKind::kHog) {
        const FlowField& f = raw[pair_index(anchor, anchor + sf)];
        std::vector<double> motion;
        if (cfg.kind == TargetKind::kHogFlow) {
          const auto origin = grid.origin(p);
          for (int y = 0; y < grid.shape().h; ++y)
            for (int x = 0; x < grid.shape().w; ++x) {
              const int px = static_cast<int>(origin.x) + x;
              const int py = static_cast<int>(origin.y) + y;
              motion.push_back(f.u(px, py));
              motion.push_back(f.v(px, py));
            }
        } else {
          std::vector<double> second;
          for (const auto& s : seeds) {
            const auto mh = motion_histograms(f, s);
            if (cfg.kind == TargetKind::kHogHof) {
              detail::append_bins(motion, mh.hof.bins);
            } else {
              detail::append_bins(motion, mh.mbh_x.bins);
              detail::append_bins(second, mh.mbh_y.bins);
            }
          }
          motion.insert(motion.end(), second.begin(), second.end());
        }
        detail::append_normalized(values, std::move(motion));
      }
    }
    if (values.size() != dim) throw PipelineError("internal: target length mismatch");
    pt.values.assign(values.begin(), values.end());
  });

  out.file.grid = grid;
  out.file.channels = video.channels();
  out.file.config = cfg;
  out.file.mask_type = o.mask_type;
  out.file.mask_seed = o.mask_seed;
  out.file.ratio = static_cast<float>(o.mask_ratio);
  out.file.s_rgb = plan.s_rgb;
  out.file.s_flow = plan.s_flow;
  out.file.patches = std::move(patches);

  out.pack.width = static_cast<std::uint32_t>(video.width());
  out.pack.height = static_cast<std::uint32_t>(video.height());
  out.pack.length = static_cast<std::uint16_t>(cfg.L);
  out.pack.flow_stride = static_cast<std::uint16_t>(sf);
  for (auto& v : tracked)
    for (auto& at : v) {
      ++out.trajectories;
      if (!at.trajectory.valid) ++out.invalid;
      out.pack.trajectories.push_back(std::move(at));
    }
  return out;
}

}  // namespace m3v
