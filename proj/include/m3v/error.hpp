#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace m3v {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated precondition on an argument (shape, range, divisibility).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Filesystem access failed.
class IoError : public Error {
 public:
  using Error::Error;
};

// Bad key, value or combination in a pipeline configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data cannot satisfy the requested pipeline (e.g. the video is too
// short for the sampling plan).
class PipelineError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

enum class FormatErrorKind {
  kBadMagic,
  kBadVersion,
  kUnsupportedColorspace,
  kUnsupportedFormat,
  kBadMaxval,
  kDimensionMismatch,
  kTruncated,
  kMalformed,
};

inline const char* to_string(FormatErrorKind kind) {
  switch (kind) {
    case FormatErrorKind::kBadMagic: return "bad magic";
    case FormatErrorKind::kBadVersion: return "unsupported version";
    case FormatErrorKind::kUnsupportedColorspace: return "unsupported colorspace";
    case FormatErrorKind::kUnsupportedFormat: return "unsupported format";
    case FormatErrorKind::kBadMaxval: return "unsupported maxval";
    case FormatErrorKind::kDimensionMismatch: return "dimension mismatch";
    case FormatErrorKind::kTruncated: return "truncated payload";
    case FormatErrorKind::kMalformed: return "malformed data";
  }
  return "unknown";
}

// Decoding a byte stream failed. Carries the byte offset at which the
// problem was detected.
class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, std::size_t offset, const std::string& what)
      : Error(std::string(to_string(kind)) + " at byte " + std::to_string(offset) +
              (what.empty() ? "" : ": " + what)),
        kind_(kind),
        offset_(offset) {}

  FormatErrorKind kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  FormatErrorKind kind_;
  std::size_t offset_;
};

}  // namespace m3v
