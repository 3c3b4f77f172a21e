#pragma once

// Seeded synthetic scenes: a ring of cameras with ground-truth poses, noisy
// pose graphs with labelled outliers, and per-view depth maps whose MVS and
// monocular versions degrade in complementary ways.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "esvs/camera.hpp"
#include "esvs/config.hpp"
#include "esvs/depth_map.hpp"
#include "esvs/error.hpp"
#include "esvs/rng.hpp"
#include "esvs/so3.hpp"
#include "esvs/viewgraph.hpp"

namespace esvs {

/// Plane in the camera frame. It passes through (center_x·depth, 0, depth)
/// and is tilted about the camera y axis by tilt_deg. Rays hit it only
/// while |x/z − center_x| ≤ extent and |y/z| ≤ extent.
struct Plane {
  double depth = 1.0;
  double extent = 1.0;
  double center_x = 0.0;
  double tilt_deg = 0.0;
};

struct ScenePreset {
  int camera_count = 30;
  double ring_radius = 10.0;
  Vec3 look_at = Vec3::Zero();
  double position_jitter = 1.0;  // std of the camera center offset
  int width = 64;
  int height = 48;
  double focal = 60.0;
  std::vector<Plane> planes{{2.0, 0.65, -0.45, 25.0}, {20.0, 1000.0, 0.0, 0.0}};
  std::uint64_t seed = 42;

  void validate() const {
    if (camera_count < 2) throw ConfigError("camera_count must be >= 2");
    if (!(ring_radius > 0.0)) throw ConfigError("ring_radius must be > 0");
    if (!(position_jitter >= 0.0)) throw ConfigError("position_jitter must be >= 0");
    if (width <= 0 || height <= 0) throw ConfigError("image size must be > 0");
    if (!(focal > 0.0)) throw ConfigError("focal must be > 0");
    if (planes.empty()) throw ConfigError("at least one plane is required");
    for (std::size_t k = 0; k < planes.size(); ++k) {
      if (!(planes[k].depth > 0.0)) throw ConfigError("plane depths must be > 0");
      if (!(planes[k].extent > 0.0)) throw ConfigError("plane extents must be > 0");
      if (std::abs(planes[k].tilt_deg) >= 80.0) throw ConfigError("plane tilt must be < 80 deg");
      if (k > 0 && !(planes[k].depth > planes[k - 1].depth)) {
        throw ConfigError("plane depths must be strictly increasing");
      }
    }
  }

  PinholeCamera intrinsics() const {
    PinholeCamera c;
    c.fx = c.fy = focal;
    c.cx = width / 2.0;
    c.cy = height / 2.0;
    c.width = width;
    c.height = height;
    return c;
  }
};

struct NoiseModel {
  double edge_noise_sigma = deg2rad(5.0);  // RMS tangent-space angle, radians
  double outlier_fraction = 0.1;
  double mvs_noise_coeff = 0.002;          // MVS depth std = coeff · depth²
  double mvs_max_depth = 50.0;             // MVS invalid beyond this depth
  double mvs_conf_scale = 0.1;             // MVS confidence = exp(−std / scale)
  double mono_scale = 3.7;                 // truth ≈ mono_scale · mono + mono_shift
  double mono_shift = 0.4;
  double mono_noise_sigma = 0.01;          // relative
  double mono_outlier_fraction = 0.0;
  double mono_confidence = 0.9;

  void validate() const {
    if (!(edge_noise_sigma >= 0.0)) throw ConfigError("edge_noise_sigma must be >= 0");
    if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0)) {
      throw ConfigError("outlier_fraction must lie in [0, 1]");
    }
    if (!(mvs_noise_coeff >= 0.0)) throw ConfigError("mvs_noise_coeff must be >= 0");
    if (!(mvs_max_depth > 0.0)) throw ConfigError("mvs_max_depth must be > 0");
    if (!(mvs_conf_scale > 0.0)) throw ConfigError("mvs_conf_scale must be > 0");
    if (!(mono_scale > 0.0)) throw ConfigError("mono_scale must be > 0");
    if (!(mono_noise_sigma >= 0.0)) throw ConfigError("mono_noise_sigma must be >= 0");
    if (!(mono_outlier_fraction >= 0.0 && mono_outlier_fraction <= 1.0)) {
      throw ConfigError("mono_outlier_fraction must lie in [0, 1]");
    }
    if (!(mono_confidence >= 0.0 && mono_confidence <= 1.0)) {
      throw ConfigError("mono_confidence must lie in [0, 1]");
    }
  }
};

/// Independent stream for (seed, stream) via splitmix64.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// World-to-camera rotation looking from `center` at `target` with world +y
/// up (camera x right, y down, z forward).
inline Rotation look_at_rotation(const Vec3& center, const Vec3& target) {
  const Vec3 z = (target - center).normalized();
  Vec3 up = Vec3::UnitY() - Vec3::UnitY().dot(z) * z;
  if (up.norm() < 1e-9) up = Vec3::UnitZ() - Vec3::UnitZ().dot(z) * z;
  const Vec3 y = -up.normalized();
  const Vec3 x = y.cross(z);
  Mat3 m;
  m.row(0) = x;
  m.row(1) = y;
  m.row(2) = z;
  return Rotation::from_matrix(m);
}

/// Cameras evenly spaced on a horizontal ring around look_at, with seeded
/// jitter of the centers, all facing look_at.
inline std::vector<PinholeCamera> generate_cameras(const ScenePreset& preset) {
  preset.validate();
  Rng rng(derive_seed(preset.seed, 1));
  std::vector<PinholeCamera> cams;
  const PinholeCamera k = preset.intrinsics();
  for (int c = 0; c < preset.camera_count; ++c) {
    const double a = 2.0 * kPi * c / preset.camera_count;
    Vec3 center = preset.look_at +
                  preset.ring_radius * Vec3(std::cos(a), 0.0, std::sin(a));
    center += rng.normal3(preset.position_jitter);
    cams.push_back(PinholeCamera::with_center(k, look_at_rotation(center, preset.look_at), center));
  }
  return cams;
}

struct GeneratedGraph {
  ViewGraph noisy;                 // relatives only, no absolutes
  ViewGraph truth;                 // exact relatives and absolutes
  std::vector<bool> outlier;       // per edge, aligned with both graphs
};

/// Chain edges (k, k+1) always, every other pair with probability
/// `density`. Relatives get left-multiplied tangent noise; a seeded choice
/// of round(outlier_fraction · |E|) edges is replaced by uniform rotations.
inline GeneratedGraph generate_pose_graph(const std::vector<PinholeCamera>& cams,
                                          const NoiseModel& noise, double density,
                                          std::uint64_t seed) {
  noise.validate();
  if (cams.size() < 2) throw ConfigError("generate_pose_graph needs at least 2 cameras");
  if (!(density > 0.0 && density <= 1.0)) throw ConfigError("density must lie in (0, 1]");
  Rng rng(derive_seed(seed, 2));
  const int n = static_cast<int>(cams.size());

  GeneratedGraph out;
  for (int v = 0; v < n; ++v) {
    out.noisy.add_vertex(v);
    out.truth.add_vertex(v, cams[v].rotation);
  }
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double u = rng.uniform();
      if (j == i + 1 || u < density) pairs.emplace_back(i, j);
    }
  }

  const double axis_sd = noise.edge_noise_sigma / std::sqrt(3.0);
  std::vector<Rotation> rel;
  for (auto [i, j] : pairs) {
    const Rotation exact = compose(cams[j].rotation, inverse(cams[i].rotation));
    out.truth.add_edge({i, j, exact, 1.0, false});
    const Vec3 t = rng.normal3(axis_sd);
    rel.push_back(noise.edge_noise_sigma > 0.0 ? compose(exp_map(t), exact) : exact);
  }

  out.outlier.assign(pairs.size(), false);
  const auto count = static_cast<std::size_t>(std::llround(noise.outlier_fraction * pairs.size()));
  std::vector<std::size_t> idx(pairs.size());
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
  rng.shuffle(idx);
  for (std::size_t k = 0; k < count; ++k) {
    out.outlier[idx[k]] = true;
    rel[idx[k]] = rng.rotation();
  }
  for (std::size_t e = 0; e < pairs.size(); ++e) {
    out.noisy.add_edge({pairs[e].first, pairs[e].second, rel[e], 1.0, false});
  }
  return out;
}

struct DepthPair {
  DepthMap truth;
  DepthMap mvs;
  ConfidenceMap mvs_conf;
  DepthMap mono;  // affine-distorted: truth ≈ mono_scale · mono + mono_shift
  ConfidenceMap mono_conf;
};

/// Camera-frame depth of the nearest plane hit by the ray through pixel
/// (x, y), or NaN when no plane is hit.
inline double ray_plane_depth(const PinholeCamera& cam, const std::vector<Plane>& planes,
                              int x, int y) {
  const Vec3 d((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
  double best = std::numeric_limits<double>::quiet_NaN();
  for (const auto& p : planes) {
    const double th = deg2rad(p.tilt_deg);
    const Vec3 n(std::sin(th), 0.0, std::cos(th));
    const Vec3 p0(p.center_x * p.depth, 0.0, p.depth);
    const double den = n.dot(d);
    if (!(den > 1e-12)) continue;
    const double z = n.dot(p0) / den;  // d has unit z, so t is the depth
    if (!(z > 0.0)) continue;
    if (std::abs(d.x() - p.center_x) > p.extent || std::abs(d.y()) > p.extent) continue;
    if (std::isnan(best) || z < best) best = z;
  }
  return best;
}

/// Ground truth by ray casting; MVS gets depth²-scaled Gaussian noise and
/// is dropped past mvs_max_depth; monocular depth gets relative noise, the
/// inverse of the (mono_scale, mono_shift) affine map and optional gross
/// outliers.
inline DepthPair generate_depth_pair(const PinholeCamera& cam, const ScenePreset& preset,
                                     const NoiseModel& noise, std::uint64_t seed) {
  preset.validate();
  noise.validate();
  Rng rng(derive_seed(seed, 3));
  const int w = cam.width, h = cam.height;
  DepthPair out{DepthMap(w, h), DepthMap(w, h), ConfidenceMap(w, h), DepthMap(w, h),
                ConfidenceMap(w, h)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double z = ray_plane_depth(cam, preset.planes, x, y);
      const std::size_t k = out.truth.index(x, y);
      const double n_mvs = rng.normal(), n_mono = rng.normal();
      if (std::isnan(z)) continue;
      out.truth.set(k, z);
      if (z <= noise.mvs_max_depth) {
        const double sd = noise.mvs_noise_coeff * z * z;
        out.mvs.set(k, z + sd * n_mvs);
        if (out.mvs.valid(k)) out.mvs_conf.set(k, std::exp(-sd / noise.mvs_conf_scale));
      }
      out.mono.set(k, (z * (1.0 + noise.mono_noise_sigma * n_mono) - noise.mono_shift) /
                          noise.mono_scale);
      if (out.mono.valid(k)) out.mono_conf.set(k, noise.mono_confidence);
    }
  }
  if (noise.mono_outlier_fraction > 0.0) {
    std::vector<std::size_t> valid;
    for (std::size_t k = 0; k < out.mono.size(); ++k) {
      if (out.mono.valid(k)) valid.push_back(k);
    }
    rng.shuffle(valid);
    const auto count =
        static_cast<std::size_t>(std::llround(noise.mono_outlier_fraction * valid.size()));
    for (std::size_t a = 0; a < count; ++a) {
      out.mono.set(valid[a], out.mono[valid[a]] * rng.uniform(1.5, 3.0));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config readers

inline Plane parse_plane(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  Plane p;
  std::string extra;
  if (!(in >> p.depth >> p.extent >> p.center_x >> p.tilt_deg) || (in >> extra)) {
    throw ConfigError(key + ": expected 'depth extent center_x tilt_deg'");
  }
  return p;
}

/// Keys: camera_count ring_radius position_jitter image_width image_height
/// focal plane.<n>.
inline void read_preset(KeyValueConfig& kv, ScenePreset& p) {
  kv.get("camera_count", p.camera_count);
  kv.get("ring_radius", p.ring_radius);
  kv.get("position_jitter", p.position_jitter);
  kv.get("image_width", p.width);
  kv.get("image_height", p.height);
  kv.get("focal", p.focal);
  const auto planes = kv.take_prefixed("plane.");
  if (!planes.empty()) {
    std::vector<std::pair<long long, Plane>> numbered;
    for (const auto& [k, v] : planes) {
      numbered.emplace_back(KeyValueConfig::to_int(k, k.substr(6)), parse_plane(k, v));
    }
    std::sort(numbered.begin(), numbered.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    p.planes.clear();
    for (const auto& [n, plane] : numbered) p.planes.push_back(plane);
  }
}

/// Keys: edge_noise_deg outlier_fraction mvs_noise_coeff mvs_max_depth
/// mvs_conf_scale mono_scale mono_shift mono_noise_sigma
/// mono_outlier_fraction mono_confidence.
inline void read_noise(KeyValueConfig& kv, NoiseModel& n) {
  if (kv.has("edge_noise_deg")) {
    double deg = 0.0;
    kv.get("edge_noise_deg", deg);
    n.edge_noise_sigma = deg2rad(deg);
  }
  kv.get("outlier_fraction", n.outlier_fraction);
  kv.get("mvs_noise_coeff", n.mvs_noise_coeff);
  kv.get("mvs_max_depth", n.mvs_max_depth);
  kv.get("mvs_conf_scale", n.mvs_conf_scale);
  kv.get("mono_scale", n.mono_scale);
  kv.get("mono_shift", n.mono_shift);
  kv.get("mono_noise_sigma", n.mono_noise_sigma);
  kv.get("mono_outlier_fraction", n.mono_outlier_fraction);
  kv.get("mono_confidence", n.mono_confidence);
}

}  // namespace esvs
