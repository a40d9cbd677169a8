#pragma once

#include <charconv>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "m3v/binary_io.hpp"
#include "m3v/error.hpp"
#include "m3v/image.hpp"

namespace m3v {

namespace detail {

inline bool is_pnm_space(std::uint8_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

inline int parse_positive_int(std::string_view s, std::size_t offset, const char* what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || v <= 0) {
    throw FormatError(FormatErrorKind::kMalformed, offset,
                      std::string("invalid ") + what + " \"" + std::string(s) + "\"");
  }
  return v;
}

}  // namespace detail

// Decodes the luma plane of a YUV4MPEG2 stream. Mono and 4:2:0 streams are
// accepted; chroma samples are skipped.
inline FrameSequence parse_y4m(std::span<const std::uint8_t> bytes) {
  constexpr std::string_view kMagic = "YUV4MPEG2";
  const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  if (!text.starts_with(kMagic) ||
      (text.size() > kMagic.size() && text[kMagic.size()] != ' ' &&
       text[kMagic.size()] != '\n')) {
    throw FormatError(FormatErrorKind::kBadMagic, 0, "expected YUV4MPEG2 signature");
  }
  const std::size_t header_end = text.find('\n');
  if (header_end == std::string_view::npos) {
    throw FormatError(FormatErrorKind::kTruncated, text.size(), "unterminated stream header");
  }

  int width = 0;
  int height = 0;
  double frame_rate = 0.0;
  bool mono = false;
  std::size_t pos = kMagic.size();
  while (pos < header_end) {
    if (text[pos] == ' ') {
      ++pos;
      continue;
    }
    std::size_t tok_end = text.find_first_of(" \n", pos);
    const std::string_view tok = text.substr(pos, tok_end - pos);
    const std::string_view val = tok.substr(1);
    switch (tok[0]) {
      case 'W': width = detail::parse_positive_int(val, pos, "width"); break;
      case 'H': height = detail::parse_positive_int(val, pos, "height"); break;
      case 'F': {
        const auto colon = val.find(':');
        if (colon == std::string_view::npos) {
          throw FormatError(FormatErrorKind::kMalformed, pos, "frame rate must be num:den");
        }
        const int num = detail::parse_positive_int(val.substr(0, colon), pos, "frame rate");
        const int den = detail::parse_positive_int(val.substr(colon + 1), pos, "frame rate");
        frame_rate = static_cast<double>(num) / den;
        break;
      }
      case 'C':
        if (val == "mono") {
          mono = true;
        } else if (val == "420" || val == "420mpeg2") {
          mono = false;
        } else {
          throw FormatError(FormatErrorKind::kUnsupportedColorspace, pos,
                            "colorspace C" + std::string(val));
        }
        break;
      default: break;  // I, A, X tokens carry nothing we need
    }
    pos = tok_end;
  }
  if (width == 0 || height == 0) {
    throw FormatError(FormatErrorKind::kMalformed, header_end, "missing W or H");
  }
  if (!mono && (width % 2 != 0 || height % 2 != 0)) {
    throw FormatError(FormatErrorKind::kMalformed, header_end, "4:2:0 requires even dimensions");
  }

  const std::size_t luma = static_cast<std::size_t>(width) * height;
  const std::size_t payload = mono ? luma : luma + luma / 2;
  std::vector<Frame> frames;
  pos = header_end + 1;
  while (pos < text.size()) {
    if (text.substr(pos, 5) != "FRAME") {
      throw FormatError(FormatErrorKind::kMalformed, pos, "expected FRAME marker");
    }
    const std::size_t marker_end = text.find('\n', pos);
    if (marker_end == std::string_view::npos) {
      throw FormatError(FormatErrorKind::kTruncated, text.size(), "unterminated FRAME marker");
    }
    const std::size_t data_start = marker_end + 1;
    if (text.size() - data_start < payload) {
      throw FormatError(FormatErrorKind::kTruncated, data_start,
                        "frame " + std::to_string(frames.size()) + " needs " +
                            std::to_string(payload) + " bytes");
    }
    Frame f(width, height, 1);
    auto& d = f.data();
    for (std::size_t i = 0; i < luma; ++i) d[i] = bytes[data_start + i];
    frames.push_back(std::move(f));
    pos = data_start + payload;
  }
  if (frames.empty()) throw FormatError(FormatErrorKind::kMalformed, pos, "stream has no frames");
  return FrameSequence(std::move(frames), frame_rate);
}

inline FrameSequence read_y4m(const std::string& path) { return parse_y4m(read_file(path)); }

// Decodes one binary PGM (P5) or PPM (P6) image with maxval 255.
inline Frame parse_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') {
    throw FormatError(FormatErrorKind::kBadMagic, 0, "expected PNM signature");
  }
  int channels = 0;
  if (bytes[1] == '5') {
    channels = 1;
  } else if (bytes[1] == '6') {
    channels = 3;
  } else if (bytes[1] >= '1' && bytes[1] <= '4') {
    throw FormatError(FormatErrorKind::kUnsupportedFormat, 0,
                      std::string("P") + static_cast<char>(bytes[1]) + " is not supported");
  } else {
    throw FormatError(FormatErrorKind::kBadMagic, 0, "expected P5 or P6");
  }

  std::size_t pos = 2;
  auto next_token = [&](const char* what) -> std::pair<std::string_view, std::size_t> {
    while (pos < bytes.size()) {
      if (detail::is_pnm_space(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !detail::is_pnm_space(bytes[pos]) && bytes[pos] != '#') ++pos;
    if (start == pos) {
      throw FormatError(FormatErrorKind::kTruncated, start, std::string("missing ") + what);
    }
    return {std::string_view(reinterpret_cast<const char*>(bytes.data()) + start, pos - start),
            start};
  };

  auto [wtok, woff] = next_token("width");
  const int width = detail::parse_positive_int(wtok, woff, "width");
  auto [htok, hoff] = next_token("height");
  const int height = detail::parse_positive_int(htok, hoff, "height");
  auto [mtok, moff] = next_token("maxval");
  const int maxval = detail::parse_positive_int(mtok, moff, "maxval");
  if (maxval != 255) {
    throw FormatError(FormatErrorKind::kBadMaxval, moff, "maxval " + std::string(mtok));
  }
  if (pos >= bytes.size() || !detail::is_pnm_space(bytes[pos])) {
    throw FormatError(FormatErrorKind::kTruncated, pos, "missing separator before raster");
  }
  ++pos;

  const std::size_t n = static_cast<std::size_t>(width) * height * channels;
  if (bytes.size() - pos < n) {
    throw FormatError(FormatErrorKind::kTruncated, pos,
                      "raster needs " + std::to_string(n) + " bytes");
  }
  Frame f(width, height, channels);
  auto& d = f.data();
  for (std::size_t i = 0; i < n; ++i) d[i] = bytes[pos + i];
  return f;
}

inline Frame read_pnm(const std::string& path) { return parse_pnm(read_file(path)); }

// Loads an ordered list of PNM files as one sequence. Every file must share
// width, height and channel count with the first.
inline FrameSequence load_image_sequence(const std::vector<std::string>& paths) {
  if (paths.empty()) throw InvalidArgument("load_image_sequence needs at least one path");
  std::vector<Frame> frames;
  frames.reserve(paths.size());
  for (const auto& p : paths) {
    Frame f = read_pnm(p);
    if (!frames.empty() && !f.same_shape(frames.front())) {
      throw FormatError(FormatErrorKind::kDimensionMismatch, 0,
                        p + " does not match the shape of " + paths.front());
    }
    frames.push_back(std::move(f));
  }
  return FrameSequence(std::move(frames));
}

}  // namespace m3v
