#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "m3v/error.hpp"

namespace m3v {

// Sub-pixel image coordinate. Pixel (col, row) has its center at (col, row).
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend bool operator==(const Point&, const Point&) = default;
};

// Row-major H x W x C image holding real-valued samples.
class Frame {
 public:
  Frame() = default;
  Frame(int width, int height, int channels = 1, double fill = 0.0)
      : width_(width), height_(height), channels_(channels) {
    if (width <= 0 || height <= 0) throw InvalidArgument("frame dimensions must be positive");
    if (channels != 1 && channels != 3) throw InvalidArgument("frame channels must be 1 or 3");
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }
  Frame(int width, int height, int channels, std::vector<double> data)
      : Frame(width, height, channels) {
    if (data.size() != data_.size()) throw InvalidArgument("frame payload size mismatch");
    data_ = std::move(data);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int x, int y, int c = 0) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data_[index(x, y, c)]; }

  // Edge-replicated access.
  double clamped(int x, int y, int c = 0) const {
    x = std::clamp(x, 0, width_ - 1);
    y = std::clamp(y, 0, height_ - 1);
    return data_[index(x, y, c)];
  }

  // Bilinear sample with edge replication.
  double bilinear(double x, double y, int c = 0) const {
    x = std::clamp(x, 0.0, static_cast<double>(width_ - 1));
    y = std::clamp(y, 0.0, static_cast<double>(height_ - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0;
    const double fy = y - y0;
    const double a = clamped(x0, y0, c);
    const double b = clamped(x0 + 1, y0, c);
    const double d = clamped(x0, y0 + 1, c);
    const double e = clamped(x0 + 1, y0 + 1, c);
    return (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (d * (1.0 - fx) + e * fx) * fy;
  }

  bool same_shape(const Frame& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  friend bool operator==(const Frame&, const Frame&) = default;

 private:
  std::size_t index(int x, int y, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 1;
  std::vector<double> data_;
};

// An ordered run of equally shaped frames.
class FrameSequence {
 public:
  FrameSequence() = default;
  explicit FrameSequence(std::vector<Frame> frames, double frame_rate = 0.0)
      : frames_(std::move(frames)), frame_rate_(frame_rate) {
    if (frames_.empty()) throw InvalidArgument("frame sequence must hold at least one frame");
    for (const auto& f : frames_) {
      if (!f.same_shape(frames_.front())) {
        throw InvalidArgument("all frames of a sequence must share width, height and channels");
      }
    }
  }

  std::size_t size() const noexcept { return frames_.size(); }
  bool empty() const noexcept { return frames_.empty(); }
  int width() const { return frames_.front().width(); }
  int height() const { return frames_.front().height(); }
  int channels() const { return frames_.front().channels(); }
  double frame_rate() const noexcept { return frame_rate_; }

  const Frame& operator[](std::size_t i) const { return frames_[i]; }
  const Frame& at(std::size_t i) const { return frames_.at(i); }
  const std::vector<Frame>& frames() const noexcept { return frames_; }

  auto begin() const noexcept { return frames_.begin(); }
  auto end() const noexcept { return frames_.end(); }

 private:
  std::vector<Frame> frames_;
  double frame_rate_ = 0.0;
};

// BT.601 luma. Identity on single-channel input.
inline Frame to_grayscale(const Frame& frame) {
  if (frame.channels() == 1) return frame;
  if (frame.channels() != 3) throw InvalidArgument("to_grayscale expects 1 or 3 channels");
  Frame out(frame.width(), frame.height(), 1);
  for (int y = 0; y < frame.height(); ++y) {
    for (int x = 0; x < frame.width(); ++x) {
      out.at(x, y) = 0.299 * frame.at(x, y, 0) + 0.587 * frame.at(x, y, 1) +
                     0.114 * frame.at(x, y, 2);
    }
  }
  return out;
}

inline FrameSequence to_grayscale(const FrameSequence& seq) {
  if (seq.channels() == 1) return seq;
  std::vector<Frame> out;
  out.reserve(seq.size());
  for (const auto& f : seq) out.push_back(to_grayscale(f));
  return FrameSequence(std::move(out), seq.frame_rate());
}

}  // namespace m3v
