#include <array>
#include <cmath>

#include <gtest/gtest.h>

#include "esvs/rng.hpp"
#include "esvs/so3.hpp"

namespace esvs {
namespace {

using M3 = std::array<std::array<double, 3>, 3>;

// Independent oracles: Rodrigues' formula and plain-loop matrix algebra.
M3 rodrigues(const Vec3& axis, double angle) {
  const Vec3 k = axis.normalized();
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  return {{{c + k.x() * k.x() * t, k.x() * k.y() * t - k.z() * s, k.x() * k.z() * t + k.y() * s},
           {k.y() * k.x() * t + k.z() * s, c + k.y() * k.y() * t, k.y() * k.z() * t - k.x() * s},
           {k.z() * k.x() * t - k.y() * s, k.z() * k.y() * t + k.x() * s, c + k.z() * k.z() * t}}};
}

M3 matmul(const M3& a, const M3& b) {
  M3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

M3 transpose(const M3& a) {
  M3 t{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) t[i][j] = a[j][i];
  return t;
}

double trace_angle(const M3& a, const M3& b) {
  const M3 r = matmul(transpose(a), b);
  const double c = std::clamp((r[0][0] + r[1][1] + r[2][2] - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

double max_abs_diff(const Mat3& m, const M3& o) {
  double d = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) d = std::max(d, std::abs(m(i, j) - o[i][j]));
  return d;
}

struct Sample {
  Vec3 axis;
  double angle;
  Rotation rot;
  M3 mat;
};

Sample random_sample(Rng& rng) {
  Vec3 axis = rng.normal3(1.0);
  const double angle = rng.uniform(0.0, kPi);
  return {axis, angle, Rotation::from_axis_angle(axis, angle), rodrigues(axis, angle)};
}

TEST(So3, ComposeSameAxisAddsAngles) {
  const Rotation r = compose(Rotation::about_z(deg2rad(90)), Rotation::about_z(deg2rad(90)));
  EXPECT_NEAR(geodesic_distance(r, Rotation::about_z(deg2rad(180))), 0.0, 1e-12);
}

TEST(So3, ComposeWithInverseIsIdentity) {
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    const Rotation r = rng.rotation();
    EXPECT_LT(angle_of(compose(r, inverse(r))), 1e-9);
    EXPECT_LT(angle_of(compose(inverse(r), r)), 1e-9);
  }
}

TEST(So3, ComposeMatchesMatrixProductOracle) {
  Rng rng(7);
  for (int k = 0; k < 100; ++k) {
    const Sample a = random_sample(rng), b = random_sample(rng);
    EXPECT_LT(max_abs_diff(compose(a.rot, b.rot).matrix(), matmul(a.mat, b.mat)), 1e-9);
  }
}

TEST(So3, InverseBasics) {
  EXPECT_EQ(inverse(Rotation::identity()), Rotation::identity());
  const Rotation rz = Rotation::about_z(0.7);
  EXPECT_LT(geodesic_distance(inverse(rz), Rotation::about_z(-0.7)), 1e-12);
}

TEST(So3, InverseMatchesTransposeOracle) {
  Rng rng(11);
  for (int k = 0; k < 100; ++k) {
    const Sample a = random_sample(rng);
    EXPECT_LT(max_abs_diff(inverse(a.rot).matrix(), transpose(a.mat)), 1e-9);
  }
}

TEST(So3, GeodesicDistanceDefinition) {
  const Rotation r = Rotation::from_axis_angle(Vec3(1, 2, 3), 1.1);
  EXPECT_EQ(geodesic_distance(r, r), 0.0);
  for (double theta : {1e-6, 0.3, 1.5, 3.0, kPi}) {
    EXPECT_NEAR(geodesic_distance(Rotation::identity(), Rotation::about_z(theta)), theta, 1e-12);
  }
}

TEST(So3, GeodesicDistanceMatchesTraceOracle) {
  Rng rng(3);
  for (int k = 0; k < 1000; ++k) {
    const Sample a = random_sample(rng), b = random_sample(rng);
    EXPECT_NEAR(geodesic_distance(a.rot, b.rot), trace_angle(a.mat, b.mat), 1e-7);
  }
}

TEST(So3, GeodesicDistanceIsSymmetricAndBiInvariant) {
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    const Rotation a = rng.rotation(), b = rng.rotation(), g = rng.rotation();
    const double d = geodesic_distance(a, b);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, kPi);
    EXPECT_NEAR(d, geodesic_distance(b, a), 1e-12);
    EXPECT_NEAR(d, geodesic_distance(g * a, g * b), 1e-9);
    EXPECT_NEAR(d, geodesic_distance(a * g, b * g), 1e-9);
  }
}

TEST(So3, TriangleInequality) {
  Rng rng(9);
  for (int k = 0; k < 1000; ++k) {
    const Rotation a = rng.rotation(), b = rng.rotation(), c = rng.rotation();
    EXPECT_LE(geodesic_distance(a, c), geodesic_distance(a, b) + geodesic_distance(b, c) + 1e-9);
  }
}

TEST(So3, QuatDistanceExamples) {
  const Rotation r = Rotation::from_axis_angle(Vec3(0, 1, 1), 0.4);
  EXPECT_EQ(quat_distance(r, r), 0.0);
  for (const Vec3& axis : {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 1)}) {
    EXPECT_NEAR(quat_distance(Rotation::identity(), Rotation::from_axis_angle(axis, kPi)),
                std::sqrt(2.0), 1e-12);
  }
}

TEST(So3, QuatDistanceClosedFormRelation) {
  Rng rng(13);
  for (int k = 0; k < 1000; ++k) {
    const Rotation a = rng.rotation(), b = rng.rotation();
    const double gamma = geodesic_distance(a, b);
    EXPECT_NEAR(quat_distance(a, b), 2.0 * std::sin(gamma / 4.0), 1e-9);
    EXPECT_NEAR(quat_distance(a, b), quat_distance(b, a), 1e-15);
  }
}

TEST(So3, ExpLogExamples) {
  EXPECT_LT(geodesic_distance(exp_map(Vec3(0, 0, kPi / 2)), Rotation::about_z(deg2rad(90))), 1e-12);
  EXPECT_EQ(exp_map(Vec3::Zero()), Rotation::identity());
  EXPECT_EQ(log_map(Rotation::identity()), Vec3::Zero());
}

TEST(So3, ExpLogRoundTrip) {
  Rng rng(17);
  for (int k = 0; k < 100; ++k) {
    Vec3 v = rng.normal3(1.0);
    v *= rng.uniform(0.0, 3.0) / v.norm();
    EXPECT_LT((log_map(exp_map(v)) - v).norm(), 1e-9);
  }
  // tiny angles take the series branch
  const Vec3 small(1e-10, -2e-10, 3e-11);
  EXPECT_LT((log_map(exp_map(small)) - small).norm(), 1e-20);
}

TEST(So3, LogMapCutLocus) {
  EXPECT_THROW(log_map(Rotation::about_x(kPi)), CutLocusError);
  EXPECT_THROW(log_map(Rotation::about_x(kPi - 1e-7)), CutLocusError);
  EXPECT_NO_THROW(log_map(Rotation::about_x(kPi - 1e-5)));
}

TEST(So3, CanonicalForm) {
  Rng rng(19);
  for (int k = 0; k < 200; ++k) {
    const Rotation r = rng.rotation();
    EXPECT_GE(r.w(), 0.0);
    EXPECT_NEAR(r.coeffs().norm(), 1.0, 1e-9);
    const Rotation again(r.coeffs());
    EXPECT_EQ(again, r);  // idempotent
    EXPECT_EQ(Rotation(-r.coeffs()), r);  // double cover collapses
  }
  // w == 0: first nonzero component positive
  const Rotation half(0.0, 0.0, -1.0, 0.0);
  EXPECT_EQ(half.y(), 1.0);
  EXPECT_EQ(inverse(half), half);
}

TEST(So3, GroupAxioms) {
  Rng rng(23);
  for (int k = 0; k < 200; ++k) {
    const Rotation a = rng.rotation(), b = rng.rotation(), c = rng.rotation();
    EXPECT_LT(geodesic_distance((a * b) * c, a * (b * c)), 1e-9);
    EXPECT_LT(geodesic_distance(a * Rotation::identity(), a), 1e-15);
    EXPECT_LT(geodesic_distance(Rotation::identity() * a, a), 1e-15);
  }
}

TEST(So3, MatrixRoundTrip) {
  Rng rng(29);
  for (int k = 0; k < 1000; ++k) {
    const Sample s = random_sample(rng);
    EXPECT_LT(max_abs_diff(s.rot.matrix(), s.mat), 1e-9);
    EXPECT_LT((Rotation::from_matrix(s.rot.matrix()).coeffs() - s.rot.coeffs()).norm(), 1e-9);
  }
}

TEST(So3, RotateAgreesWithMatrix) {
  Rng rng(31);
  for (int k = 0; k < 100; ++k) {
    const Rotation r = rng.rotation();
    const Vec3 v = rng.normal3(2.0);
    EXPECT_LT((r.rotate(v) - r.matrix() * v).norm(), 1e-12);
  }
}

TEST(So3, QuaternionProductMatrices) {
  Rng rng(37);
  const Vec4 a = rng.rotation().coeffs(), b = rng.rotation().coeffs();
  EXPECT_LT((quat_left_matrix(a) * b - quat_mul(a, b)).norm(), 1e-15);
  EXPECT_LT((quat_right_matrix(b) * a - quat_mul(a, b)).norm(), 1e-15);
}

TEST(So3, TextRoundTripIsExact) {
  Rng rng(41);
  for (int k = 0; k < 100; ++k) {
    const Rotation r = rng.rotation();
    EXPECT_EQ(parse_rotation(to_string(r)), r);
  }
  EXPECT_THROW(parse_rotation("1 0 0"), FormatError);
  EXPECT_THROW(parse_rotation("0 0 0 0"), FormatError);
}

}  // namespace
}  // namespace esvs
