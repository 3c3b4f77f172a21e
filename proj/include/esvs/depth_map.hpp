#pragma once

// Dense per-pixel depth and confidence grids plus their binary file form:
//
//   "DFMP" u32 width u32 height u8 kind(0 depth, 1 confidence)
//   then width*height f32 little-endian, row-major; NaN marks invalid depth.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "esvs/binary_io.hpp"
#include "esvs/error.hpp"

namespace esvs {

class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(int width, int height)
      : width_(width), height_(height),
        values_(checked_size(width, height), 0.0),
        valid_(values_.size(), 0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }

  bool valid(std::size_t k) const { return valid_[k] != 0; }
  bool valid(int x, int y) const { return valid(index(x, y)); }
  double operator[](std::size_t k) const { return values_[k]; }
  double at(int x, int y) const { return values_[index(x, y)]; }

  void set(std::size_t k, double depth) {
    if (!std::isfinite(depth) || !(depth > 0.0)) {
      invalidate(k);
      return;
    }
    values_[k] = depth;
    valid_[k] = 1;
  }
  void set(int x, int y, double depth) { set(index(x, y), depth); }
  void invalidate(std::size_t k) {
    values_[k] = 0.0;
    valid_[k] = 0;
  }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid_) n += v;
    return n;
  }

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

 private:
  static std::size_t checked_size(int w, int h) {
    if (w <= 0 || h <= 0) throw DimensionMismatchError("map dimensions must be > 0");
    return static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  }

  int width_ = 0, height_ = 0;
  std::vector<double> values_;
  std::vector<std::uint8_t> valid_;
};

class ConfidenceMap {
 public:
  ConfidenceMap() = default;
  ConfidenceMap(int width, int height, double fill = 0.0)
      : width_(width), height_(height) {
    if (width <= 0 || height <= 0) throw DimensionMismatchError("map dimensions must be > 0");
    check(fill);
    values_.assign(static_cast<std::size_t>(width) * height, fill);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t k) const { return values_[k]; }
  double at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }

  void set(std::size_t k, double c) {
    check(c);
    values_[k] = c;
  }
  void set(int x, int y, double c) { set(static_cast<std::size_t>(y) * width_ + x, c); }

 private:
  static void check(double c) {
    if (!(c >= 0.0 && c <= 1.0)) throw FormatError("confidence must lie in [0, 1]");
  }

  int width_ = 0, height_ = 0;
  std::vector<double> values_;
};

template <typename A, typename B>
bool same_shape(const A& a, const B& b) {
  return a.width() == b.width() && a.height() == b.height();
}

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (!same_shape(a, b)) {
    throw DimensionMismatchError(std::string(what) + ": map dimensions differ (" +
                                 std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                                 " vs " + std::to_string(b.width()) + "x" +
                                 std::to_string(b.height()) + ")");
  }
}

// ---------------------------------------------------------------------------
// DFMP files

inline constexpr std::uint8_t kDfmpDepth = 0;
inline constexpr std::uint8_t kDfmpConfidence = 1;

inline std::string encode_dfmp_header(int w, int h, std::uint8_t kind) {
  std::string out = "DFMP";
  binio::put_u32(out, static_cast<std::uint32_t>(w));
  binio::put_u32(out, static_cast<std::uint32_t>(h));
  out.push_back(static_cast<char>(kind));
  return out;
}

inline std::string encode_dfmp(const DepthMap& m) {
  std::string out = encode_dfmp_header(m.width(), m.height(), kDfmpDepth);
  for (std::size_t k = 0; k < m.size(); ++k) {
    binio::put_f32(out, m.valid(k) ? static_cast<float>(m[k])
                                   : std::numeric_limits<float>::quiet_NaN());
  }
  return out;
}

inline std::string encode_dfmp(const ConfidenceMap& m) {
  std::string out = encode_dfmp_header(m.width(), m.height(), kDfmpConfidence);
  for (std::size_t k = 0; k < m.size(); ++k) binio::put_f32(out, static_cast<float>(m[k]));
  return out;
}

namespace detail {

struct DfmpHeader {
  int width, height;
  std::uint8_t kind;
};

inline DfmpHeader read_dfmp_header(binio::Reader& r) {
  r.expect_magic("DFMP");
  const std::uint32_t w = r.u32(), h = r.u32();
  const std::uint8_t kind = r.u8();
  if (w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16)) {
    throw FormatError("DFMP: unreasonable dimensions");
  }
  if (kind > 1) throw FormatError("DFMP: unknown kind " + std::to_string(kind));
  if (r.remaining() != static_cast<std::size_t>(w) * h * 4) {
    throw FormatError("DFMP: payload size does not match dimensions");
  }
  return {static_cast<int>(w), static_cast<int>(h), kind};
}

}  // namespace detail

inline DepthMap decode_depth_map(const std::string& bytes) {
  binio::Reader r(bytes, "DFMP");
  const auto hdr = detail::read_dfmp_header(r);
  if (hdr.kind != kDfmpDepth) throw FormatError("DFMP: expected a depth map (kind 0)");
  DepthMap m(hdr.width, hdr.height);
  for (std::size_t k = 0; k < m.size(); ++k) {
    const float v = r.f32();
    if (std::isnan(v)) continue;
    if (!std::isfinite(v) || !(v > 0.0f)) throw FormatError("DFMP: depth must be positive or NaN");
    m.set(k, static_cast<double>(v));
  }
  return m;
}

inline ConfidenceMap decode_confidence_map(const std::string& bytes) {
  binio::Reader r(bytes, "DFMP");
  const auto hdr = detail::read_dfmp_header(r);
  if (hdr.kind != kDfmpConfidence) {
    throw FormatError("DFMP: expected a confidence map (kind 1)");
  }
  ConfidenceMap m(hdr.width, hdr.height);
  for (std::size_t k = 0; k < m.size(); ++k) {
    const float v = r.f32();
    if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("DFMP: confidence outside [0, 1]");
    m.set(k, static_cast<double>(v));
  }
  return m;
}

inline DepthMap read_depth_map(const std::string& path) {
  return decode_depth_map(binio::read_file(path));
}
inline ConfidenceMap read_confidence_map(const std::string& path) {
  return decode_confidence_map(binio::read_file(path));
}
inline void write_map(const std::string& path, const DepthMap& m) {
  binio::write_file(path, encode_dfmp(m));
}
inline void write_map(const std::string& path, const ConfidenceMap& m) {
  binio::write_file(path, encode_dfmp(m));
}

}  // namespace esvs
