#pragma once

// Rotation algebra on SO(3) using unit quaternions stored as (w, x, y, z).
//
// Every Rotation is kept in canonical form: w >= 0, and when w == 0 the
// first nonzero component is positive. Equal rotations therefore compare,
// hash and print identically.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "esvs/error.hpp"

namespace esvs {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kEpsUnit = 1e-9;
inline constexpr double kEpsAngle = 1e-6;
inline constexpr double kPi = 3.14159265358979323846;

inline constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

class Rotation {
 public:
  /// Identity.
  Rotation() = default;

  /// Builds from raw quaternion components; normalizes and canonicalizes.
  /// Throws FormatError on a zero or non-finite quaternion.
  Rotation(double w, double x, double y, double z) : q_{w, x, y, z} {
    normalize();
  }

  explicit Rotation(const Vec4& wxyz)
      : Rotation(wxyz[0], wxyz[1], wxyz[2], wxyz[3]) {}

  static Rotation identity() { return {}; }

  /// Right-handed rotation of `angle` radians about `axis` (normalized here).
  static Rotation from_axis_angle(const Vec3& axis, double angle) {
    const double n = axis.norm();
    if (!(n > 0.0)) return identity();
    const double s = std::sin(0.5 * angle) / n;
    return {std::cos(0.5 * angle), axis.x() * s, axis.y() * s, axis.z() * s};
  }

  static Rotation about_x(double angle) { return from_axis_angle(Vec3::UnitX(), angle); }
  static Rotation about_y(double angle) { return from_axis_angle(Vec3::UnitY(), angle); }
  static Rotation about_z(double angle) { return from_axis_angle(Vec3::UnitZ(), angle); }

  /// Shepperd's method; `m` must be a proper rotation matrix.
  static Rotation from_matrix(const Mat3& m) {
    const double tr = m.trace();
    double w, x, y, z;
    if (tr > m(0, 0) && tr > m(1, 1) && tr > m(2, 2)) {
      const double s = 2.0 * std::sqrt(1.0 + tr);
      w = 0.25 * s;
      x = (m(2, 1) - m(1, 2)) / s;
      y = (m(0, 2) - m(2, 0)) / s;
      z = (m(1, 0) - m(0, 1)) / s;
    } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
      const double s = 2.0 * std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2));
      w = (m(2, 1) - m(1, 2)) / s;
      x = 0.25 * s;
      y = (m(0, 1) + m(1, 0)) / s;
      z = (m(0, 2) + m(2, 0)) / s;
    } else if (m(1, 1) > m(2, 2)) {
      const double s = 2.0 * std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2));
      w = (m(0, 2) - m(2, 0)) / s;
      x = (m(0, 1) + m(1, 0)) / s;
      y = 0.25 * s;
      z = (m(1, 2) + m(2, 1)) / s;
    } else {
      const double s = 2.0 * std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1));
      w = (m(1, 0) - m(0, 1)) / s;
      x = (m(0, 2) + m(2, 0)) / s;
      y = (m(1, 2) + m(2, 1)) / s;
      z = 0.25 * s;
    }
    return {w, x, y, z};
  }

  double w() const { return q_[0]; }
  double x() const { return q_[1]; }
  double y() const { return q_[2]; }
  double z() const { return q_[3]; }
  Vec4 coeffs() const { return {q_[0], q_[1], q_[2], q_[3]}; }
  Vec3 vec() const { return {q_[1], q_[2], q_[3]}; }

  Mat3 matrix() const {
    const double w = q_[0], x = q_[1], y = q_[2], z = q_[3];
    Mat3 m;
    m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return m;
  }

  Vec3 rotate(const Vec3& v) const {
    // v' = v + 2 q_v x (q_v x v + w v)
    const Vec3 u = vec();
    const Vec3 t = 2.0 * u.cross(v);
    return v + q_[0] * t + u.cross(t);
  }

  /// Exact component-wise equality of canonical forms.
  friend bool operator==(const Rotation& a, const Rotation& b) {
    return a.q_ == b.q_;
  }

 private:
  void normalize() {
    const double n2 = q_[0] * q_[0] + q_[1] * q_[1] + q_[2] * q_[2] + q_[3] * q_[3];
    if (!std::isfinite(n2) || n2 == 0.0) {
      throw FormatError("quaternion must be finite and nonzero");
    }
    // Leave already-unit input bit-identical so text round trips are stable.
    if (std::abs(n2 - 1.0) > 1e-15) {
      const double n = std::sqrt(n2);
      for (double& c : q_) c /= n;
    }
    canonicalize();
  }

  void canonicalize() {
    for (double c : q_) {
      if (c > 0.0) break;
      if (c < 0.0) {
        for (double& d : q_) d = -d;
        break;
      }
    }
    for (double& c : q_) {
      if (c == 0.0) c = 0.0;  // drop negative zeros
    }
  }

  std::array<double, 4> q_{1.0, 0.0, 0.0, 0.0};
};

struct AxisAngle {
  Vec3 axis = Vec3::UnitZ();
  double angle = 0.0;  // [0, pi]
};

// ---------------------------------------------------------------------------
// Raw quaternion helpers (no canonicalization). Used by the MPNN where
// gradients flow through the product.

/// Hamilton product a * b on (w, x, y, z) 4-vectors.
inline Vec4 quat_mul(const Vec4& a, const Vec4& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

inline Vec4 quat_conj(const Vec4& a) { return {a[0], -a[1], -a[2], -a[3]}; }

/// Matrix L(a) with quat_mul(a, b) == L(a) * b.
inline Eigen::Matrix4d quat_left_matrix(const Vec4& a) {
  Eigen::Matrix4d m;
  m << a[0], -a[1], -a[2], -a[3],
       a[1],  a[0], -a[3],  a[2],
       a[2],  a[3],  a[0], -a[1],
       a[3], -a[2],  a[1],  a[0];
  return m;
}

/// Matrix R(b) with quat_mul(a, b) == R(b) * a.
inline Eigen::Matrix4d quat_right_matrix(const Vec4& b) {
  Eigen::Matrix4d m;
  m << b[0], -b[1], -b[2], -b[3],
       b[1],  b[0],  b[3], -b[2],
       b[2], -b[3],  b[0],  b[1],
       b[3],  b[2], -b[1],  b[0];
  return m;
}

// ---------------------------------------------------------------------------
// Group operations

/// a ∘ b: apply b first, then a.
inline Rotation compose(const Rotation& a, const Rotation& b) {
  return Rotation(quat_mul(a.coeffs(), b.coeffs()));
}

inline Rotation inverse(const Rotation& a) {
  return Rotation(a.w(), -a.x(), -a.y(), -a.z());
}

inline Rotation operator*(const Rotation& a, const Rotation& b) {
  return compose(a, b);
}

/// Angle of a⁻¹b in [0, pi]. Evaluated with atan2 on the relative
/// quaternion, which stays accurate near 0 and near pi.
inline double geodesic_distance(const Rotation& a, const Rotation& b) {
  if (a == b) return 0.0;
  const Vec4 r = quat_mul(quat_conj(a.coeffs()), b.coeffs());
  const double s = Vec3(r[1], r[2], r[3]).norm();
  return 2.0 * std::atan2(s, std::abs(r[0]));
}

/// Chordal quaternion distance min(|qa - qb|, |qa + qb|), in [0, sqrt 2].
inline double quat_distance(const Rotation& a, const Rotation& b) {
  const Vec4 qa = a.coeffs(), qb = b.coeffs();
  return std::min((qa - qb).norm(), (qa + qb).norm());
}

/// Rotation angle of `a` alone.
inline double angle_of(const Rotation& a) {
  return 2.0 * std::atan2(a.vec().norm(), std::abs(a.w()));
}

inline AxisAngle to_axis_angle(const Rotation& a) {
  const Vec3 v = a.vec();
  const double s = v.norm();
  if (s == 0.0) return {};
  return {v / s, 2.0 * std::atan2(s, a.w())};
}

/// Tangent vector (axis * angle) to rotation.
inline Rotation exp_map(const Vec3& v) {
  const double theta = v.norm();
  const double half = 0.5 * theta;
  // sin(theta/2)/theta, with a Taylor branch near zero
  const double k = theta < 1e-8 ? 0.5 - theta * theta / 48.0
                                : std::sin(half) / theta;
  return {std::cos(half), k * v.x(), k * v.y(), k * v.z()};
}

namespace detail {

inline Vec3 log_map_unchecked(const Rotation& a) {
  const Vec3 v = a.vec();
  const double s = v.norm();
  const double w = a.w();  // canonical: w >= 0
  if (s < 1e-12) {
    // 2 v / w up to O(s^3)
    return (2.0 / w) * v;
  }
  const double theta = 2.0 * std::atan2(s, w);
  return (theta / s) * v;
}

}  // namespace detail

/// Inverse of exp_map on angles below pi. Throws CutLocusError when the
/// rotation angle lies within kEpsAngle of pi.
inline Vec3 log_map(const Rotation& a) {
  if (angle_of(a) > kPi - kEpsAngle) {
    throw CutLocusError("log_map: rotation angle within 1e-6 of pi");
  }
  return detail::log_map_unchecked(a);
}

// ---------------------------------------------------------------------------
// Text form "qw qx qy qz" with 17 significant digits.

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string to_string(const Rotation& r) {
  return format_double(r.w()) + " " + format_double(r.x()) + " " +
         format_double(r.y()) + " " + format_double(r.z());
}

inline std::ostream& operator<<(std::ostream& os, const Rotation& r) {
  return os << to_string(r);
}

inline Rotation parse_rotation(const std::string& text) {
  std::istringstream in(text);
  double w, x, y, z;
  if (!(in >> w >> x >> y >> z)) {
    throw FormatError("expected four quaternion components: '" + text + "'");
  }
  return {w, x, y, z};
}

}  // namespace esvs
