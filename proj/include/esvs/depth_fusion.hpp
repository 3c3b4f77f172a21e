#pragma once

// Fusion of multi-view-stereo depth with monocular depth.
//
// Monocular depth is first brought to the MVS metric by an affine fit,
// each pixel is then labelled with the source it should trust, and the
// labelled sources are merged into one map.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "esvs/binary_io.hpp"
#include "esvs/depth_map.hpp"
#include "esvs/error.hpp"

namespace esvs {

struct FusionConfig {
  double tau = 0.05;         // monocular confidence threshold for blending
  double sigma = 0.66;       // far boundary, as a fraction of median depth
  double reg_lambda = 0.01;  // weight regularizer in the confidence loss
  double conf_floor = 0.5;   // MVS confidence needed to take part in alignment
  bool shift = true;         // fit scale and shift (false: scale only)

  void validate() const {
    if (!(tau > 0.0 && tau < 1.0)) throw ConfigError("tau must lie in (0, 1)");
    if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0");
    if (!(reg_lambda >= 0.0)) throw ConfigError("reg_lambda must be >= 0");
    if (!(conf_floor >= 0.0 && conf_floor <= 1.0)) throw ConfigError("conf_floor must lie in [0, 1]");
  }
};

// ---------------------------------------------------------------------------
// Scale alignment

struct ScaleFit {
  double scale = 1.0;
  double shift = 0.0;
  std::size_t inlier_count = 0;
};

namespace detail {

struct Pair {
  double mono, mvs;
};

inline ScaleFit least_squares(const std::vector<Pair>& pts, bool shift) {
  const double n = static_cast<double>(pts.size());
  if (!shift) {
    double smd = 0.0, smm = 0.0;
    for (const auto& p : pts) {
      smd += p.mono * p.mvs;
      smm += p.mono * p.mono;
    }
    if (!(smm > 0.0)) throw DegenerateFitError("align_scale: monocular depths are all zero");
    return {smd / smm, 0.0, pts.size()};
  }
  double mx = 0.0, my = 0.0;
  for (const auto& p : pts) {
    mx += p.mono;
    my += p.mvs;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, scale2 = 0.0;
  for (const auto& p : pts) {
    sxx += (p.mono - mx) * (p.mono - mx);
    sxy += (p.mono - mx) * (p.mvs - my);
    scale2 += p.mono * p.mono;
  }
  if (!(sxx > 1e-20 * scale2)) {
    throw DegenerateFitError("align_scale: monocular depth is constant over the overlap");
  }
  const double s = sxy / sxx;
  return {s, my - s * mx, pts.size()};
}

}  // namespace detail

/// Fits mvs ≈ scale · mono + shift over pixels valid in both maps whose
/// MVS confidence reaches `conf_floor`, then refits without residuals above
/// three times the median absolute residual until the kept set settles.
inline ScaleFit align_scale(const DepthMap& mono, const DepthMap& mvs,
                            const ConfidenceMap& mvs_conf, double conf_floor,
                            bool shift = true) {
  require_same_shape(mono, mvs, "align_scale");
  require_same_shape(mono, mvs_conf, "align_scale");

  std::vector<detail::Pair> pts;
  for (std::size_t k = 0; k < mono.size(); ++k) {
    if (mono.valid(k) && mvs.valid(k) && mvs_conf[k] >= conf_floor) {
      pts.push_back({mono[k], mvs[k]});
    }
  }
  if (pts.size() < 10) {
    throw InsufficientOverlapError("align_scale: " + std::to_string(pts.size()) +
                                   " qualifying pixels, need at least 10");
  }
  ScaleFit fit = detail::least_squares(pts, shift);
  std::vector<char> keep(pts.size(), 1);
  for (int round = 0; round < 20; ++round) {
    std::vector<double> abs_res(pts.size());
    for (std::size_t k = 0; k < pts.size(); ++k) {
      abs_res[k] = std::abs(fit.scale * pts[k].mono + fit.shift - pts[k].mvs);
    }
    std::vector<double> sorted = abs_res;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double cutoff = 3.0 * sorted[sorted.size() / 2];

    std::vector<char> next(pts.size());
    std::vector<detail::Pair> kept;
    for (std::size_t k = 0; k < pts.size(); ++k) {
      next[k] = abs_res[k] <= cutoff;
      if (next[k]) kept.push_back(pts[k]);
    }
    if (next == keep && round > 0) break;
    if (kept.size() < 10) break;
    try {
      fit = detail::least_squares(kept, shift);
    } catch (const DegenerateFitError&) {
      break;
    }
    keep = std::move(next);
  }
  return fit;
}

/// scale · mono + shift on valid pixels; non-positive results become invalid.
inline DepthMap apply_scale(const DepthMap& mono, const ScaleFit& fit) {
  DepthMap out(mono.width(), mono.height());
  for (std::size_t k = 0; k < mono.size(); ++k) {
    if (mono.valid(k)) out.set(k, fit.scale * mono[k] + fit.shift);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Confidence-weighted depth loss

/// Σ w (d − d̂)² + reg_lambda Σ w² over pixels valid in both depth maps.
inline double confidence_weighted_loss(const DepthMap& pred, const DepthMap& truth,
                                       const ConfidenceMap& w, double reg_lambda) {
  require_same_shape(pred, truth, "confidence_weighted_loss");
  require_same_shape(pred, w, "confidence_weighted_loss");
  double data = 0.0, reg = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!pred.valid(k) || !truth.valid(k)) continue;
    const double r = truth[k] - pred[k];
    data += w[k] * r * r;
    reg += w[k] * w[k];
  }
  return data + reg_lambda * reg;
}

// ---------------------------------------------------------------------------
// Pixel classification and fusion

enum class Provenance : std::uint8_t { Mvs = 0, Mono = 1, Blend = 2, Invalid = 3 };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::Mvs: return "MVS";
    case Provenance::Mono: return "MONO";
    case Provenance::Blend: return "BLEND";
    case Provenance::Invalid: return "INVALID";
  }
  return "?";
}

class ProvenanceMask {
 public:
  ProvenanceMask() = default;
  ProvenanceMask(int width, int height, Provenance fill = Provenance::Invalid)
      : width_(width), height_(height),
        labels_(static_cast<std::size_t>(width) * height, fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return labels_.size(); }
  Provenance operator[](std::size_t k) const { return labels_[k]; }
  Provenance at(int x, int y) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  void set(std::size_t k, Provenance p) { labels_[k] = p; }

  std::size_t count(Provenance p) const {
    return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), p));
  }

 private:
  int width_ = 0, height_ = 0;
  std::vector<Provenance> labels_;
};

/// Median of the valid values of a depth map.
inline double median_depth(const DepthMap& m) {
  std::vector<double> v;
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (m.valid(k)) v.push_back(m[k]);
  }
  if (v.empty()) throw EmptyValidSetError("depth map has no valid pixels");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

namespace detail {

inline ProvenanceMask classify(const DepthMap& mvs, const ConfidenceMap& mono_conf,
                               const FusionConfig& cfg, const DepthMap* mono) {
  cfg.validate();
  require_same_shape(mvs, mono_conf, "classify_pixels");
  if (mono) require_same_shape(mvs, *mono, "classify_pixels");
  const double median = median_depth(mvs);

  ProvenanceMask mask(mvs.width(), mvs.height());
  for (std::size_t k = 0; k < mvs.size(); ++k) {
    const bool mono_ok = !mono || mono->valid(k);
    if (!mvs.valid(k)) {
      mask.set(k, mono_ok ? Provenance::Mono : Provenance::Invalid);
      continue;
    }
    const bool far = mvs[k] * cfg.sigma > median;
    if (!mono_ok) {
      mask.set(k, Provenance::Mvs);
    } else if (far) {
      mask.set(k, Provenance::Mono);
    } else {
      mask.set(k, mono_conf[k] > cfg.tau ? Provenance::Blend : Provenance::Mvs);
    }
  }
  return mask;
}

}  // namespace detail

/// Labels each pixel: far (σ·d > median MVS depth) → MONO; near with
/// monocular confidence above τ → BLEND; other near pixels → MVS. The
/// monocular map is taken as valid everywhere.
inline ProvenanceMask classify_pixels(const DepthMap& mvs, const ConfidenceMap& mono_conf,
                                      const FusionConfig& cfg) {
  return detail::classify(mvs, mono_conf, cfg, nullptr);
}

/// As above, honoring the monocular map's validity: a pixel missing from
/// one source falls back to the other, and is INVALID when both are missing.
inline ProvenanceMask classify_pixels(const DepthMap& mvs, const DepthMap& mono,
                                      const ConfidenceMap& mono_conf, const FusionConfig& cfg) {
  return detail::classify(mvs, mono_conf, cfg, &mono);
}

namespace detail {

inline DepthMap fuse(const DepthMap& mvs, const DepthMap& mono, const ProvenanceMask& mask,
                     const ConfidenceMap& mono_conf, const ConfidenceMap* mvs_conf) {
  require_same_shape(mvs, mono, "fuse");
  require_same_shape(mvs, mask, "fuse");
  require_same_shape(mvs, mono_conf, "fuse");
  if (mvs_conf) require_same_shape(mvs, *mvs_conf, "fuse");

  DepthMap out(mvs.width(), mvs.height());
  for (std::size_t k = 0; k < mvs.size(); ++k) {
    const bool has_mvs = mvs.valid(k), has_mono = mono.valid(k);
    switch (mask[k]) {
      case Provenance::Invalid:
        break;
      case Provenance::Mvs:
        if (has_mvs) out.set(k, mvs[k]);
        else if (has_mono) out.set(k, mono[k]);
        break;
      case Provenance::Mono:
        if (has_mono) out.set(k, mono[k]);
        else if (has_mvs) out.set(k, mvs[k]);
        break;
      case Provenance::Blend: {
        if (has_mvs && has_mono) {
          const double cm = mono_conf[k];
          const double cs = mvs_conf ? (*mvs_conf)[k] : 1.0;
          const double den = cm + cs;
          const double v = den > 0.0 ? (cm * mono[k] + cs * mvs[k]) / den
                                     : 0.5 * (mono[k] + mvs[k]);
          // keep the convex-combination bound under rounding
          out.set(k, std::clamp(v, std::min(mono[k], mvs[k]), std::max(mono[k], mvs[k])));
        } else if (has_mvs) {
          out.set(k, mvs[k]);
        } else if (has_mono) {
          out.set(k, mono[k]);
        }
        break;
      }
    }
  }
  return out;
}

}  // namespace detail

/// Merges the sources per the mask. BLEND pixels take the confidence
/// weighted mean, with MVS confidence 1 when no MVS confidence is given.
inline DepthMap fuse(const DepthMap& mvs, const DepthMap& mono_aligned,
                     const ProvenanceMask& mask, const ConfidenceMap& mono_conf) {
  return detail::fuse(mvs, mono_aligned, mask, mono_conf, nullptr);
}

inline DepthMap fuse(const DepthMap& mvs, const DepthMap& mono_aligned,
                     const ProvenanceMask& mask, const ConfidenceMap& mono_conf,
                     const ConfidenceMap& mvs_conf) {
  return detail::fuse(mvs, mono_aligned, mask, mono_conf, &mvs_conf);
}

// ---------------------------------------------------------------------------
// Metrics

struct DepthErrorStats {
  double rmse = 0.0;
  double abs_rel = 0.0;
  double valid_fraction = 0.0;
};

inline DepthErrorStats depth_error_stats(const DepthMap& pred, const DepthMap& truth) {
  require_same_shape(pred, truth, "depth_error_stats");
  double se = 0.0, rel = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!pred.valid(k) || !truth.valid(k)) continue;
    const double d = pred[k] - truth[k];
    se += d * d;
    rel += std::abs(d) / truth[k];
    ++n;
  }
  if (n == 0) throw EmptyValidSetError("depth_error_stats: no jointly valid pixels");
  return {std::sqrt(se / n), rel / n, static_cast<double>(n) / pred.size()};
}

// ---------------------------------------------------------------------------
// Mask file: "PMSK" u32 width u32 height, then one label byte per pixel
// (0 MVS, 1 MONO, 2 BLEND, 3 INVALID), row-major.

inline std::string encode_mask(const ProvenanceMask& m) {
  std::string out = "PMSK";
  binio::put_u32(out, static_cast<std::uint32_t>(m.width()));
  binio::put_u32(out, static_cast<std::uint32_t>(m.height()));
  for (std::size_t k = 0; k < m.size(); ++k) out.push_back(static_cast<char>(m[k]));
  return out;
}

inline ProvenanceMask decode_mask(const std::string& bytes) {
  binio::Reader r(bytes, "PMSK");
  r.expect_magic("PMSK");
  const std::uint32_t w = r.u32(), h = r.u32();
  if (w == 0 || h == 0 || r.remaining() != static_cast<std::size_t>(w) * h) {
    throw FormatError("PMSK: payload size does not match dimensions");
  }
  ProvenanceMask m(static_cast<int>(w), static_cast<int>(h));
  for (std::size_t k = 0; k < m.size(); ++k) {
    const std::uint8_t v = r.u8();
    if (v > 3) throw FormatError("PMSK: bad label " + std::to_string(v));
    m.set(k, static_cast<Provenance>(v));
  }
  return m;
}

}  // namespace esvs
