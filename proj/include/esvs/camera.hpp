#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "esvs/error.hpp"
#include "esvs/so3.hpp"

namespace esvs {

/// Pinhole camera. The pose maps world to camera coordinates:
/// x_cam = rotation · x_world + translation. Pixel centers sit at integer
/// coordinates; the optical axis hits (cx, cy).
struct PinholeCamera {
  double fx = 1.0, fy = 1.0;
  double cx = 0.0, cy = 0.0;
  int width = 1, height = 1;
  Rotation rotation;
  Vec3 translation = Vec3::Zero();

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw FormatError("camera focal lengths must be > 0");
    if (width <= 0 || height <= 0) throw FormatError("camera image size must be > 0");
  }

  Vec3 to_camera(const Vec3& world) const { return rotation.rotate(world) + translation; }
  Vec3 to_world(const Vec3& cam) const { return inverse(rotation).rotate(cam - translation); }
  Vec3 center() const { return -inverse(rotation).rotate(translation); }

  /// Pose from a camera center and orientation.
  static PinholeCamera with_center(PinholeCamera intrinsics, const Rotation& world_to_cam,
                                   const Vec3& center) {
    intrinsics.rotation = world_to_cam;
    intrinsics.translation = -world_to_cam.rotate(center);
    return intrinsics;
  }
};

struct Projection {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;  // camera-frame z
};

inline Projection project(const PinholeCamera& cam, const Vec3& world) {
  const Vec3 p = cam.to_camera(world);
  if (!(p.z() > 0.0)) throw BehindCameraError("point is not in front of the camera");
  return {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy, p.z()};
}

/// World point seen at pixel (u, v) with camera-frame depth z.
inline Vec3 unproject(const PinholeCamera& cam, double u, double v, double depth) {
  const Vec3 p((u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth);
  return cam.to_world(p);
}

/// Unit vector from the surface point toward the camera center.
inline Vec3 view_direction(const PinholeCamera& cam, const Vec3& world) {
  const Vec3 d = cam.center() - world;
  const double n = d.norm();
  if (n < 1e-12) throw DegeneratePointError("point coincides with the camera center");
  return d / n;
}

// Text form: "fx fy cx cy width height qw qx qy qz tx ty tz"

inline std::string serialize_camera(const PinholeCamera& c) {
  std::string s;
  for (double v : {c.fx, c.fy, c.cx, c.cy}) s += format_double(v) + " ";
  s += std::to_string(c.width) + " " + std::to_string(c.height) + " ";
  s += to_string(c.rotation);
  for (int k = 0; k < 3; ++k) s += " " + format_double(c.translation[k]);
  return s + "\n";
}

inline PinholeCamera parse_camera(const std::string& text) {
  std::istringstream in(text);
  PinholeCamera c;
  double q[4];
  if (!(in >> c.fx >> c.fy >> c.cx >> c.cy >> c.width >> c.height >> q[0] >> q[1] >> q[2] >>
        q[3] >> c.translation[0] >> c.translation[1] >> c.translation[2])) {
    throw FormatError("camera line must hold 13 fields: fx fy cx cy width height qw qx qy qz tx ty tz");
  }
  std::string extra;
  if (in >> extra) throw FormatError("trailing data after camera fields");
  c.rotation = Rotation(q[0], q[1], q[2], q[3]);
  c.validate();
  return c;
}

inline PinholeCamera read_camera_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open camera file " + path);
  std::string line;
  while (std::getline(f, line)) {
    const auto p = line.find_first_not_of(" \t\r");
    if (p == std::string::npos || line[p] == '#') continue;
    return parse_camera(line);
  }
  throw FormatError("camera file " + path + " is empty");
}

}  // namespace esvs
