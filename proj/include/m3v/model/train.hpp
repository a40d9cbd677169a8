#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "m3v/error.hpp"
#include "m3v/image.hpp"
#include "m3v/model/autoencoder.hpp"
#include "m3v/model/loss.hpp"
#include "m3v/model/optim.hpp"
#include "m3v/pipeline.hpp"
#include "m3v/targets.hpp"

namespace m3v::model {

// One training clip: the 16 input frames, scaled to [-1, 1], and
// per-patch targets in grid order (empty for patches without a target).
struct ToyClip {
  std::vector<float> pixels;  // frame, y, x, channel
  std::vector<std::size_t> masked;
  std::vector<std::vector<float>> targets;
  std::vector<std::vector<std::uint8_t>> include;
  std::vector<std::uint32_t> invalid;
  int label = -1;
};

struct ToyDataset {
  PatchGrid grid;
  int channels = 1;
  TargetConfig target;
  MaskType mask_type = MaskType::kTube;
  double mask_ratio = 0.7;
  std::vector<ToyClip> clips;

  std::size_t target_dim() const { return m3v::target_dim(target, grid.shape(), channels); }
  std::size_t patch_dim() const {
    const auto& s = grid.shape();
    return static_cast<std::size_t>(s.t) * s.h * s.w * channels;
  }
  // True when every clip has a target for every patch.
  bool complete() const {
    for (const auto& c : clips)
      for (const auto& t : c.targets)
        if (t.empty()) return false;
    return !clips.empty();
  }
};

inline ToyClip make_toy_clip(const FrameSequence& input, const TargetFile& file, int label = -1) {
  if (input.size() != static_cast<std::size_t>(file.grid.frames()) ||
      input.width() != file.grid.width() || input.height() != file.grid.height() ||
      input.channels() != file.channels) {
    throw InvalidArgument("clip does not match its target file");
  }
  ToyClip c;
  c.label = label;
  for (const auto& f : input)
    for (double v : f.data()) c.pixels.push_back(static_cast<float>(v / 127.5 - 1.0));
  const std::size_t n = file.grid.size();
  c.targets.resize(n);
  c.include.resize(n);
  c.invalid.assign(n, 0);
  const std::size_t dim = file.dim();
  for (const auto& p : file.patches) {
    c.targets[p.patch_index] = p.values;
    c.include[p.patch_index] = component_mask(file.config, dim, p.validity);
    c.invalid[p.patch_index] =
        static_cast<std::uint32_t>(std::count(p.validity.begin(), p.validity.end(), 0));
    c.masked.push_back(p.patch_index);
  }
  std::sort(c.masked.begin(), c.masked.end());
  // A file with every patch carries the mask only through its header.
  if (c.masked.size() == n) {
    c.masked = generate_mask(file.grid, file.mask_type, file.ratio, file.mask_seed).masked_indices();
  }
  return c;
}

// Convenience: dataset from pipeline outputs. With all-patch targets the
// stored mask is still the pipeline's mask.
inline ToyDataset make_toy_dataset(const std::vector<FrameSequence>& inputs,
                                   const std::vector<ClipTargets>& targets,
                                   const std::vector<int>& labels = {}) {
  if (inputs.empty() || inputs.size() != targets.size()) {
    throw InvalidArgument("dataset needs one target set per clip");
  }
  ToyDataset d;
  d.grid = targets.front().grid;
  d.channels = targets.front().file.channels;
  d.target = targets.front().file.config;
  d.mask_type = targets.front().mask.type;
  d.mask_ratio = targets.front().mask.ratio;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!(targets[i].grid == d.grid) || targets[i].file.config.kind != d.target.kind) {
      throw InvalidArgument("clips disagree on grid or target kind");
    }
    d.clips.push_back(make_toy_clip(inputs[i], targets[i].file, labels.empty() ? -1 : labels[i]));
    d.clips.back().masked = targets[i].mask.masked_indices();
  }
  return d;
}

// Token matrix for a clip; `frame_of[k]` picks the source frame for input
// slot k, which lets a single frame stand in for the whole clip.
template <typename T>
Mat<T> clip_tokens(const ToyDataset& d, const ToyClip& c, const std::vector<int>& frame_of) {
  const auto& g = d.grid;
  const auto& s = g.shape();
  const int ch = d.channels;
  const std::size_t frame_size = static_cast<std::size_t>(g.width()) * g.height() * ch;
  Mat<T> tok(static_cast<int>(g.size()), static_cast<int>(d.patch_dim()));
  for (std::size_t p = 0; p < g.size(); ++p) {
    const auto pc = g.coord(p);
    T* out = tok.row(static_cast<int>(p));
    for (int dt = 0; dt < s.t; ++dt) {
      const float* f = c.pixels.data() + frame_size * frame_of[pc.t * s.t + dt];
      for (int y = 0; y < s.h; ++y) {
        const float* src = f + (static_cast<std::size_t>(pc.y * s.h + y) * g.width() + pc.x * s.w) * ch;
        for (int i = 0; i < s.w * ch; ++i) *out++ = static_cast<T>(src[i]);
      }
    }
  }
  return tok;
}

enum class InputMode { kMultiFrame, kStatic };

inline const char* to_string(InputMode m) { return m == InputMode::kStatic ? "static" : "multi"; }

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  MaskedAutoencoder<float> model;
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Masked-motion pre-training. In static mode every clip is replaced by one
// of its frames (drawn per epoch) repeated over all 16 slots while the
// targets stay those of the real clip.
inline TrainResult train_toy(const ToyDataset& data, const TrainConfig& tc, ModelConfig mc,
                             InputMode mode = InputMode::kMultiFrame,
                             const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  tc.validate();
  if (data.clips.empty()) throw InvalidArgument("training dataset is empty");
  if (tc.resample_masks && !data.complete()) {
    throw InvalidArgument("mask resampling needs targets for every patch");
  }
  mc.grid_t = data.grid.grid_t();
  mc.grid_h = data.grid.grid_h();
  mc.grid_w = data.grid.grid_w();
  mc.patch_dim = static_cast<int>(data.patch_dim());
  mc.prediction_dim = static_cast<int>(data.target_dim());
  TrainResult res{{}, MaskedAutoencoder<float>(mc)};
  auto& model = res.model;
  AdamW<float> opt(model.params(), tc);

  const std::size_t n = data.clips.size();
  const std::size_t per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total = per_epoch * tc.epochs;
  const std::size_t warmup = per_epoch * tc.warmup_epochs;
  const int frames = data.grid.frames();
  std::vector<int> identity(frames);
  std::iota(identity.begin(), identity.end(), 0);

  std::size_t step = 0;
  for (int e = 0; e < tc.epochs; ++e) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(tc.data_seed, static_cast<std::uint64_t>(e)));
    std::shuffle(order.begin(), order.end(), rng);

    double sum = 0.0;
    std::size_t count = 0;
    double lr = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += tc.batch_size) {
      const std::size_t b1 = std::min(n, b0 + tc.batch_size);
      struct Job {
        const ToyClip* clip;
        std::vector<std::size_t> masked, visible;
        std::vector<int> frame_of;
        std::vector<LossItem> items;
      };
      std::vector<Job> jobs;
      std::size_t denom = 0;
      for (std::size_t k = b0; k < b1; ++k) {
        const std::size_t ci = order[k];
        const ToyClip& clip = data.clips[ci];
        Job j{&clip, clip.masked, {}, identity, {}};
        if (tc.resample_masks) {
          j.masked = generate_mask(data.grid, data.mask_type, data.mask_ratio,
                                   mix_seed(tc.data_seed ^ 0x6d61736bULL, e * n + ci))
                         .masked_indices();
        }
        std::vector<std::uint8_t> is_masked(data.grid.size(), 0);
        for (auto m : j.masked) is_masked[m] = 1;
        for (std::size_t p = 0; p < data.grid.size(); ++p)
          if (!is_masked[p]) j.visible.push_back(p);
        if (mode == InputMode::kStatic) {
          const int f = static_cast<int>(mix_seed(tc.data_seed ^ 0x737461ULL, e * n + ci) % frames);
          std::fill(j.frame_of.begin(), j.frame_of.end(), f);
        }
        for (auto m : j.masked) {
          if (clip.targets[m].empty()) throw InvalidArgument("masked patch has no target");
          j.items.push_back({clip.targets[m], clip.include[m], clip.invalid[m]});
        }
        denom += included_count(j.items);
        jobs.push_back(std::move(j));
      }

      model.zero_grad();
      for (const auto& j : jobs) {
        const Mat<float> tok = clip_tokens<float>(data, *j.clip, j.frame_of);
        const Mat<float> pred = model.forward(tok, j.visible, j.masked);
        Mat<float> grad;
        const auto rep = masked_motion_loss<float>(pred, j.items, &grad, denom);
        if (!std::isfinite(rep.sum)) {
          throw DivergenceError("loss became non-finite in epoch " + std::to_string(e + 1));
        }
        sum += rep.sum;
        count += rep.included;
        if (denom) model.backward(grad);
      }
      lr = learning_rate(tc, step, warmup, total);
      opt.step(lr);
      ++step;
    }
    EpochMetrics m;
    m.epoch = e + 1;
    m.loss = count ? sum / static_cast<double>(count) : 0.0;
    m.lr = lr;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(m.loss)) {
      throw DivergenceError("loss became non-finite in epoch " + std::to_string(m.epoch));
    }
    res.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return res;
}

struct ProbeCurves {
  TargetKind target = TargetKind::kTrajectory;
  TrainResult multi;
  TrainResult stat;

  double final_ratio() const {
    const double m = multi.epochs.back().loss;
    const double s = stat.epochs.back().loss;
    return m > 0.0 ? s / m : (s > 0.0 ? std::numeric_limits<double>::infinity() : 1.0);
  }
};

// Trains the same model twice on one dataset: once on the real clips and
// once on static clips built from a single frame, with identical targets
// and tube masks shared by all frames.
inline ProbeCurves static_video_probe(const ToyDataset& data, const TrainConfig& tc,
                                      const ModelConfig& mc) {
  if (data.mask_type != MaskType::kTube) {
    throw InvalidArgument("the static-video probe needs tube masks");
  }
  ProbeCurves out;
  out.target = data.target.kind;
  out.multi = train_toy(data, tc, mc, InputMode::kMultiFrame);
  out.stat = train_toy(data, tc, mc, InputMode::kStatic);
  return out;
}

// ---------------------------------------------------------------------------
// Linear probe on frozen encoder features

inline std::vector<std::vector<double>> encoder_features(MaskedAutoencoder<float>& model,
                                                         const ToyDataset& data) {
  std::vector<int> identity(data.grid.frames());
  std::iota(identity.begin(), identity.end(), 0);
  std::vector<std::vector<double>> out;
  for (const auto& c : data.clips) {
    const auto f = model.features(clip_tokens<float>(data, c, identity));
    out.emplace_back(f.begin(), f.end());
  }
  return out;
}

struct LinearProbeConfig {
  int iterations = 500;
  double lr = 0.5;
  double l2 = 1e-4;
};

struct LinearProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

// Multinomial logistic regression by full-batch gradient descent on
// features standardized with training statistics.
inline LinearProbeResult linear_probe(const std::vector<std::vector<double>>& train_x,
                                      const std::vector<int>& train_y,
                                      const std::vector<std::vector<double>>& test_x,
                                      const std::vector<int>& test_y, int classes,
                                      const LinearProbeConfig& cfg = {}) {
  if (train_x.empty() || train_x.size() != train_y.size() || test_x.size() != test_y.size()) {
    throw InvalidArgument("linear probe needs one label per feature vector");
  }
  const std::size_t d = train_x.front().size();
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (const auto& x : train_x)
    for (std::size_t i = 0; i < d; ++i) mean[i] += x[i];
  for (auto& m : mean) m /= static_cast<double>(train_x.size());
  for (const auto& x : train_x)
    for (std::size_t i = 0; i < d; ++i) sd[i] += (x[i] - mean[i]) * (x[i] - mean[i]);
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(train_x.size()));
  auto standardize = [&](const std::vector<double>& x) {
    std::vector<double> z(d + 1, 1.0);  // trailing bias input
    for (std::size_t i = 0; i < d; ++i) z[i] = sd[i] > 1e-12 ? (x[i] - mean[i]) / sd[i] : 0.0;
    return z;
  };
  std::vector<std::vector<double>> tr, te;
  for (const auto& x : train_x) tr.push_back(standardize(x));
  for (const auto& x : test_x) te.push_back(standardize(x));

  std::vector<double> w(static_cast<std::size_t>(classes) * (d + 1), 0.0);
  auto logits = [&](const std::vector<double>& z) {
    std::vector<double> l(classes, 0.0);
    for (int k = 0; k < classes; ++k)
      for (std::size_t i = 0; i <= d; ++i) l[k] += w[k * (d + 1) + i] * z[i];
    return l;
  };
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<double> g(w.size(), 0.0);
    for (std::size_t s = 0; s < tr.size(); ++s) {
      auto l = logits(tr[s]);
      const double mx = *std::max_element(l.begin(), l.end());
      double zsum = 0.0;
      for (auto& v : l) zsum += (v = std::exp(v - mx));
      for (int k = 0; k < classes; ++k) {
        const double p = l[k] / zsum - (k == train_y[s] ? 1.0 : 0.0);
        for (std::size_t i = 0; i <= d; ++i) g[k * (d + 1) + i] += p * tr[s][i];
      }
    }
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] -= cfg.lr * (g[i] / static_cast<double>(tr.size()) + cfg.l2 * w[i]);
  }
  auto accuracy = [&](const std::vector<std::vector<double>>& xs, const std::vector<int>& ys) {
    if (xs.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t s = 0; s < xs.size(); ++s) {
      const auto l = logits(xs[s]);
      hit += static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin()) == ys[s] ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(xs.size());
  };
  return {accuracy(tr, train_y), accuracy(te, test_y)};
}

}  // namespace m3v::model
