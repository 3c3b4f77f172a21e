#pragma once

// View-dependent feature aggregation and warping.
//
//  * directional_aggregate: weights each source view by max(0, uᵀv_k) and
//    normalizes by the weight sum.
//  * confidence_aggregate: unnormalized confidence-weighted sum of warped
//    monocular features (a normalized variant is available).
//  * forward_warp: splats source features into a destination view through
//    the source depth with a z-buffer.
//  * correlation / hybrid_objective / hybrid_aggregate: the per-point
//    fusion of monocular and stereo features and its correlation loss.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "esvs/binary_io.hpp"
#include "esvs/camera.hpp"
#include "esvs/depth_map.hpp"
#include "esvs/error.hpp"
#include "esvs/rng.hpp"

namespace esvs {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Feature maps

class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int width, int height, int channels)
      : width_(width), height_(height), channels_(channels) {
    if (width <= 0 || height <= 0 || channels <= 0) {
      throw DimensionMismatchError("feature map dimensions must be > 0");
    }
    values_.assign(static_cast<std::size_t>(width) * height * channels, 0.0);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  double at(int x, int y, int c) const { return values_[offset(x, y) + c]; }
  double& at(int x, int y, int c) { return values_[offset(x, y) + c]; }

  VecX pixel(std::size_t k) const {
    return Eigen::Map<const VecX>(values_.data() + k * channels_, channels_);
  }
  void set_pixel(std::size_t k, const VecX& f) {
    if (f.size() != channels_) throw DimensionMismatchError("feature length != channel count");
    for (int c = 0; c < channels_; ++c) values_[k * channels_ + c] = f[c];
  }

  const std::vector<double>& raw() const { return values_; }

 private:
  std::size_t offset(int x, int y) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_;
  }

  int width_ = 0, height_ = 0, channels_ = 0;
  std::vector<double> values_;
};

/// "FMAP" u32 width u32 height u32 channels, then f32 LE pixel-major.
inline std::string encode_fmap(const FeatureMap& m) {
  std::string out = "FMAP";
  binio::put_u32(out, static_cast<std::uint32_t>(m.width()));
  binio::put_u32(out, static_cast<std::uint32_t>(m.height()));
  binio::put_u32(out, static_cast<std::uint32_t>(m.channels()));
  for (double v : m.raw()) binio::put_f32(out, static_cast<float>(v));
  return out;
}

inline FeatureMap decode_fmap(const std::string& bytes) {
  binio::Reader r(bytes, "FMAP");
  r.expect_magic("FMAP");
  const std::uint32_t w = r.u32(), h = r.u32(), c = r.u32();
  if (w == 0 || h == 0 || c == 0 || w > (1u << 16) || h > (1u << 16) || c > 4096) {
    throw FormatError("FMAP: unreasonable dimensions");
  }
  if (r.remaining() != static_cast<std::size_t>(w) * h * c * 4) {
    throw FormatError("FMAP: payload size does not match dimensions");
  }
  FeatureMap m(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      for (int ch = 0; ch < m.channels(); ++ch) {
        const float v = r.f32();
        if (!std::isfinite(v)) throw FormatError("FMAP: non-finite feature value");
        m.at(x, y, ch) = v;
      }
  return m;
}

inline FeatureMap read_feature_map(const std::string& path) {
  return decode_fmap(binio::read_file(path));
}
inline void write_map(const std::string& path, const FeatureMap& m) {
  binio::write_file(path, encode_fmap(m));
}

// ---------------------------------------------------------------------------
// Per-point aggregation

struct Observation {
  int view = 0;
  Vec3 direction = Vec3::UnitZ();  // unit, surface point toward camera
  VecX feature;
  double confidence = 1.0;
};

struct SurfacePointSample {
  Vec3 position = Vec3::Zero();
  std::vector<Observation> observations;
};

struct DirectionalResult {
  VecX feature;
  double weight_sum = 0.0;  // 0 marks a hole
};

namespace detail {

inline Eigen::Index common_dim(const SurfacePointSample& s) {
  if (s.observations.empty()) throw DimensionMismatchError("point has no observations");
  const Eigen::Index c = s.observations.front().feature.size();
  for (const auto& o : s.observations) {
    if (o.feature.size() != c) throw DimensionMismatchError("observation feature sizes differ");
  }
  return c;
}

}  // namespace detail

/// (1/W) Σ max(0, uᵀv_k) f_k with W the weight sum. Returns a zero feature
/// and W = 0 when no view faces u.
inline DirectionalResult directional_aggregate(const Vec3& u, const SurfacePointSample& s) {
  const Eigen::Index c = detail::common_dim(s);
  DirectionalResult out{VecX::Zero(c), 0.0};
  for (const auto& o : s.observations) {
    const double w = std::max(0.0, u.dot(o.direction));
    if (w > 0.0) {
      out.feature += w * o.feature;
      out.weight_sum += w;
    }
  }
  if (out.weight_sum > 1e-12) {
    out.feature /= out.weight_sum;
  } else {
    out.feature.setZero();
    out.weight_sum = 0.0;
  }
  return out;
}

/// Σ c_k f_k. With `normalized`, divides by Σ c_k (zero when that is 0).
inline VecX confidence_aggregate(const SurfacePointSample& s, bool normalized = false) {
  const Eigen::Index c = detail::common_dim(s);
  VecX acc = VecX::Zero(c);
  double csum = 0.0;
  for (const auto& o : s.observations) {
    acc += o.confidence * o.feature;
    csum += o.confidence;
  }
  if (normalized) {
    if (csum > 0.0) acc /= csum;
    else acc.setZero();
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Forward warping

struct WarpResult {
  FeatureMap features;
  DepthMap coverage;  // destination-frame depth of the winning splat
};

/// Unprojects each valid source pixel with its depth, reprojects it into
/// the destination camera and writes it to the nearest pixel. Collisions
/// keep the smaller destination depth; exact ties keep the earlier source
/// pixel in row-major order.
inline WarpResult forward_warp(const PinholeCamera& src_cam, const PinholeCamera& dst_cam,
                               const FeatureMap& src_features, const DepthMap& src_depth) {
  if (src_features.width() != src_depth.width() || src_features.height() != src_depth.height()) {
    throw DimensionMismatchError("forward_warp: feature and depth maps differ in size");
  }
  if (src_features.width() != src_cam.width || src_features.height() != src_cam.height) {
    throw DimensionMismatchError("forward_warp: source maps do not match the source camera");
  }
  WarpResult out{FeatureMap(dst_cam.width, dst_cam.height, src_features.channels()),
                 DepthMap(dst_cam.width, dst_cam.height)};
  for (int y = 0; y < src_depth.height(); ++y) {
    for (int x = 0; x < src_depth.width(); ++x) {
      if (!src_depth.valid(x, y)) continue;
      const Vec3 world = unproject(src_cam, x, y, src_depth.at(x, y));
      const Vec3 p = dst_cam.to_camera(world);
      if (!(p.z() > 0.0)) continue;
      const double u = dst_cam.fx * p.x() / p.z() + dst_cam.cx;
      const double v = dst_cam.fy * p.y() / p.z() + dst_cam.cy;
      const double px = std::floor(u + 0.5), py = std::floor(v + 0.5);
      if (px < 0 || py < 0 || px >= dst_cam.width || py >= dst_cam.height) continue;
      const int ix = static_cast<int>(px), iy = static_cast<int>(py);
      const std::size_t k = out.coverage.index(ix, iy);
      if (out.coverage.valid(k) && !(p.z() < out.coverage[k])) continue;
      out.coverage.set(k, p.z());
      for (int c = 0; c < src_features.channels(); ++c) {
        out.features.at(ix, iy, c) = src_features.at(x, y, c);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Correlation objective

/// Pearson correlation over vector components, clamped to [-1, 1].
inline double correlation(const VecX& a, const VecX& b) {
  if (a.size() != b.size()) throw DimensionMismatchError("correlation: length mismatch");
  if (a.size() < 2) throw DimensionMismatchError("correlation: need at least 2 components");
  const double ma = a.mean(), mb = b.mean();
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const double da = a[k] - ma, db = b[k] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0) || a.maxCoeff() == a.minCoeff() ||
      b.maxCoeff() == b.minCoeff()) {
    throw ZeroVarianceError("correlation: constant input");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// λ weights of the hybrid objective. The fusion policy uses one-hot
/// settings; any nonnegative weights summing to one are accepted.
struct Lambdas {
  double both = 0.0;    // λ1: C(h_f,h_m)·C(h_f,h_s)
  double stereo = 0.0;  // λ2: C(h_f,h_s)
  double mono = 0.0;    // λ3: C(h_f,h_m)

  static Lambdas blend() { return {1.0, 0.0, 0.0}; }
  static Lambdas stereo_only() { return {0.0, 1.0, 0.0}; }
  static Lambdas mono_only() { return {0.0, 0.0, 1.0}; }

  void validate() const {
    if (both < 0 || stereo < 0 || mono < 0 || std::abs(both + stereo + mono - 1.0) > 1e-12) {
      throw ConfigError("lambdas must be nonnegative and sum to 1");
    }
  }
};

inline double hybrid_objective(const VecX& h_f, const VecX& h_m, const VecX& h_s,
                               const Lambdas& l) {
  l.validate();
  const double cm = correlation(h_f, h_m), cs = correlation(h_f, h_s);
  return l.both * cm * cs + l.stereo * cs + l.mono * cm;
}

/// Negative hybrid objective.
inline double l_corr(const VecX& h_f, const VecX& h_m, const VecX& h_s, const Lambdas& l) {
  return -hybrid_objective(h_f, h_m, h_s, l);
}

// ---------------------------------------------------------------------------
// Hybrid aggregation h_f = φ_ν(φ_α(h_m), φ_β(h_s))

inline constexpr double kLeakySlope = 0.01;

inline double leaky(double z) { return z > 0.0 ? z : kLeakySlope * z; }
inline double leaky_grad(double z) { return z > 0.0 ? 1.0 : kLeakySlope; }

struct HybridParams {
  MatX alpha_w;  // C' x C
  VecX alpha_b;
  MatX beta_w;   // C' x C
  VecX beta_b;
  MatX nu_w;     // C' x 2C'
  VecX nu_b;

  Eigen::Index in_dim() const { return alpha_w.cols(); }
  Eigen::Index out_dim() const { return alpha_w.rows(); }

  static HybridParams zeros(Eigen::Index in, Eigen::Index out) {
    return {MatX::Zero(out, in), VecX::Zero(out), MatX::Zero(out, in), VecX::Zero(out),
            MatX::Zero(out, 2 * out), VecX::Zero(out)};
  }

  /// φ_α = φ_β = identity, φ_ν = mean of the two halves.
  static HybridParams identity(Eigen::Index c) {
    HybridParams p = zeros(c, c);
    p.alpha_w.setIdentity();
    p.beta_w.setIdentity();
    p.nu_w.leftCols(c) = 0.5 * MatX::Identity(c, c);
    p.nu_w.rightCols(c) = 0.5 * MatX::Identity(c, c);
    return p;
  }

  /// Uniform in ±1/√fan_in.
  static HybridParams random(Eigen::Index in, Eigen::Index out, Rng& rng) {
    HybridParams p = zeros(in, out);
    auto fill = [&](auto& m, double fan_in) {
      const double b = 1.0 / std::sqrt(fan_in);
      for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-b, b);
    };
    fill(p.alpha_w, in);
    fill(p.alpha_b, in);
    fill(p.beta_w, in);
    fill(p.beta_b, in);
    fill(p.nu_w, 2.0 * out);
    fill(p.nu_b, 2.0 * out);
    return p;
  }

  void validate() const {
    const auto c = in_dim(), o = out_dim();
    if (alpha_b.size() != o || beta_w.rows() != o || beta_w.cols() != c || beta_b.size() != o ||
        nu_w.rows() != o || nu_w.cols() != 2 * o || nu_b.size() != o) {
      throw DimensionMismatchError("hybrid parameter shapes are inconsistent");
    }
  }

  /// Visits every tensor in declaration order.
  template <typename F>
  void for_each_tensor(F&& f) {
    f("alpha_w", alpha_w.data(), alpha_w.size());
    f("alpha_b", alpha_b.data(), alpha_b.size());
    f("beta_w", beta_w.data(), beta_w.size());
    f("beta_b", beta_b.data(), beta_b.size());
    f("nu_w", nu_w.data(), nu_w.size());
    f("nu_b", nu_b.data(), nu_b.size());
  }
};

namespace detail {

struct HybridTape {
  VecX za, a, zb, b, x, zf, f;
};

inline HybridTape hybrid_forward(const VecX& h_m, const VecX& h_s, const HybridParams& p) {
  p.validate();
  if (h_m.size() != p.in_dim() || h_s.size() != p.in_dim()) {
    throw DimensionMismatchError("hybrid_aggregate: input length != parameter input size");
  }
  HybridTape t;
  t.za = p.alpha_w * h_m + p.alpha_b;
  t.a = t.za.unaryExpr(&leaky);
  t.zb = p.beta_w * h_s + p.beta_b;
  t.b = t.zb.unaryExpr(&leaky);
  t.x.resize(2 * p.out_dim());
  t.x << t.a, t.b;
  t.zf = p.nu_w * t.x + p.nu_b;
  t.f = t.zf.unaryExpr(&leaky);
  return t;
}

/// ∂C(f, g)/∂f.
inline VecX correlation_grad(const VecX& f, const VecX& g) {
  const VecX fc = f.array() - f.mean();
  const VecX gc = g.array() - g.mean();
  const double nf = fc.norm(), ng = gc.norm();
  const double c = fc.dot(gc) / (nf * ng);
  return gc / (nf * ng) - c * fc / (nf * nf);
}

}  // namespace detail

/// Leaky-ReLU affine maps throughout (slope kLeakySlope below zero).
inline VecX hybrid_aggregate(const VecX& h_m, const VecX& h_s, const HybridParams& p) {
  return detail::hybrid_forward(h_m, h_s, p).f;
}

struct HybridLoss {
  double loss = 0.0;
  HybridParams grad;
};

/// L_corr(hybrid_aggregate(h_m, h_s), h_m, h_s) and its gradient with
/// respect to every hybrid parameter. Requires C' == C.
inline HybridLoss l_corr_and_gradients(const VecX& h_m, const VecX& h_s, const HybridParams& p,
                                       const Lambdas& l) {
  const auto t = detail::hybrid_forward(h_m, h_s, p);
  if (t.f.size() != h_m.size()) {
    throw DimensionMismatchError("l_corr: output length must equal input length");
  }
  HybridLoss out;
  out.loss = l_corr(t.f, h_m, h_s, l);

  const double cm = correlation(t.f, h_m), cs = correlation(t.f, h_s);
  const VecX gm = detail::correlation_grad(t.f, h_m);
  const VecX gs = detail::correlation_grad(t.f, h_s);
  const VecX df = -(l.both * (cs * gm + cm * gs) + l.stereo * gs + l.mono * gm);

  const VecX dzf = df.array() * t.zf.unaryExpr(&leaky_grad).array();
  out.grad = HybridParams::zeros(p.in_dim(), p.out_dim());
  out.grad.nu_w = dzf * t.x.transpose();
  out.grad.nu_b = dzf;
  const VecX dx = p.nu_w.transpose() * dzf;
  const Eigen::Index o = p.out_dim();
  const VecX dza = dx.head(o).array() * t.za.unaryExpr(&leaky_grad).array();
  const VecX dzb = dx.tail(o).array() * t.zb.unaryExpr(&leaky_grad).array();
  out.grad.alpha_w = dza * h_m.transpose();
  out.grad.alpha_b = dza;
  out.grad.beta_w = dzb * h_s.transpose();
  out.grad.beta_b = dzb;
  return out;
}

}  // namespace esvs
