#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "esvs/experiments.hpp"
#include "esvs/harness.hpp"

namespace esvs {
namespace {

TEST(Cameras, FourOnARing) {
  ScenePreset p;
  p.camera_count = 4;
  p.position_jitter = 0.0;
  const auto cams = generate_cameras(p);
  ASSERT_EQ(cams.size(), 4u);
  const Vec3 compass[] = {{10, 0, 0}, {0, 0, 10}, {-10, 0, 0}, {0, 0, -10}};
  for (int k = 0; k < 4; ++k) {
    EXPECT_LT((cams[k].center() - compass[k]).norm(), 1e-12);
    const Vec3 target = cams[k].to_camera(Vec3::Zero());
    EXPECT_NEAR(target.x(), 0.0, 1e-12);
    EXPECT_NEAR(target.y(), 0.0, 1e-12);
    EXPECT_NEAR(target.z(), 10.0, 1e-12);
  }
}

TEST(Cameras, JitteredRingStillSeesTarget) {
  ScenePreset p;
  p.camera_count = 30;
  const auto cams = generate_cameras(p);
  for (const auto& c : cams) {
    const auto proj = project(c, p.look_at);
    EXPECT_NEAR(proj.u, c.cx, 1e-9);
    EXPECT_NEAR(proj.v, c.cy, 1e-9);
  }
}

TEST(Cameras, DeterministicPerSeed) {
  ScenePreset p;
  const auto a = generate_cameras(p), b = generate_cameras(p);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_TRUE(a[k].rotation == b[k].rotation);
    EXPECT_EQ(a[k].translation, b[k].translation);
  }
  p.seed = 43;
  EXPECT_NE(generate_cameras(p)[0].translation, a[0].translation);
}

TEST(Cameras, AdjacentRelativesCloseTheLoop) {
  ScenePreset p;
  p.camera_count = 12;
  const auto cams = generate_cameras(p);
  Rotation loop;
  for (std::size_t k = 0; k < cams.size(); ++k) {
    const auto& a = cams[k];
    const auto& b = cams[(k + 1) % cams.size()];
    loop = compose(compose(b.rotation, inverse(a.rotation)), loop);
  }
  EXPECT_LT(angle_of(loop), 1e-9);
}

GeneratedGraph graph(int cameras, double noise_deg, double outliers, double density,
                     std::uint64_t seed) {
  ScenePreset p;
  p.camera_count = cameras;
  p.seed = seed;
  NoiseModel n;
  n.edge_noise_sigma = deg2rad(noise_deg);
  n.outlier_fraction = outliers;
  return generate_pose_graph(generate_cameras(p), n, density, seed);
}

TEST(PoseGraph, NoiseFreeEdgesAreExactRelatives) {
  const auto g = graph(10, 0.0, 0.0, 1.0, 3);
  EXPECT_EQ(g.noisy.edge_count(), 45u);
  for (const auto& e : g.noisy.edges()) {
    const Rotation want = compose(g.truth.absolute(e.j), inverse(g.truth.absolute(e.i)));
    EXPECT_LT(geodesic_distance(e.rel, want), 1e-12);
  }
}

TEST(PoseGraph, ChainIsAlwaysPresent) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto g = graph(15, 5.0, 0.2, 0.05, seed);
    for (int k = 0; k + 1 < 15; ++k) EXPECT_TRUE(g.noisy.find_edge(k, k + 1).has_value());
    EXPECT_EQ(connected_components(g.noisy).size(), 1u);
    EXPECT_FALSE(g.noisy.fully_initialized() && g.noisy.vertex_count() > 0 &&
                 !g.noisy.vertices().front().absolute);
  }
}

TEST(PoseGraph, ExactOutlierCount) {
  bool saw_hundred = false;
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    const auto g = graph(20, 5.0, 0.1, 0.45, seed);
    std::size_t flagged = 0;
    for (bool b : g.outlier) flagged += b;
    EXPECT_EQ(flagged, static_cast<std::size_t>(std::llround(0.1 * g.noisy.edge_count())));
    if (g.noisy.edge_count() == 100) {
      saw_hundred = true;
      EXPECT_EQ(flagged, 10u);
    }
  }
  EXPECT_TRUE(saw_hundred);
}

TEST(PoseGraph, OutliersAreFarFromTruth) {
  const auto g = graph(30, 1.0, 0.1, 0.5, 9);
  for (std::size_t e = 0; e < g.noisy.edge_count(); ++e) {
    const double r = geodesic_distance(g.noisy.edges()[e].rel, g.truth.edges()[e].rel);
    if (!g.outlier[e]) EXPECT_LT(r, deg2rad(6.0));
  }
}

TEST(PoseGraph, NoiseMatchesSigma) {
  for (double sigma_deg : {2.0, 5.0}) {
    double sq = 0.0;
    std::size_t n = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto g = graph(30, sigma_deg, 0.1, 0.5, seed);
      for (std::size_t e = 0; e < g.noisy.edge_count(); ++e) {
        if (g.outlier[e]) continue;
        const double r = geodesic_distance(g.noisy.edges()[e].rel, g.truth.edges()[e].rel);
        sq += r * r;
        ++n;
      }
    }
    EXPECT_NEAR(std::sqrt(sq / n), deg2rad(sigma_deg), 0.1 * deg2rad(sigma_deg));
  }
}

TEST(PoseGraph, DeterministicAndSerializable) {
  const auto a = graph(12, 4.0, 0.1, 0.4, 5);
  const auto b = graph(12, 4.0, 0.1, 0.4, 5);
  EXPECT_EQ(serialize_pose_graph(a.noisy), serialize_pose_graph(b.noisy));
  EXPECT_EQ(a.outlier, b.outlier);
  const ViewGraph back = parse_pose_graph(serialize_pose_graph(a.truth));
  EXPECT_EQ(serialize_pose_graph(back), serialize_pose_graph(a.truth));
}

ScenePreset single_plane(double depth) {
  ScenePreset p;
  p.planes = {{depth, 1000.0, 0.0, 0.0}};
  return p;
}

TEST(DepthPair, ZeroNoiseSourcesAgree) {
  const ScenePreset p = single_plane(4.0);
  NoiseModel n;
  n.mvs_noise_coeff = 0.0;
  n.mono_noise_sigma = 0.0;
  const auto d = generate_depth_pair(p.intrinsics(), p, n, 1);
  ASSERT_EQ(d.truth.valid_count(), d.truth.size());
  for (std::size_t k = 0; k < d.truth.size(); ++k) {
    EXPECT_NEAR(d.truth[k], 4.0, 1e-12);
    EXPECT_EQ(d.mvs[k], d.truth[k]);
    EXPECT_NEAR(n.mono_scale * d.mono[k] + n.mono_shift, d.truth[k], 1e-12);
    EXPECT_EQ(d.mvs_conf[k], 1.0);
    EXPECT_EQ(d.mono_conf[k], n.mono_confidence);
  }
}

TEST(DepthPair, TiltedPlaneDepthMatchesRayIntersection) {
  ScenePreset p;
  p.planes = {{3.0, 1000.0, 0.0, 30.0}};
  NoiseModel n;
  const auto cam = p.intrinsics();
  const auto d = generate_depth_pair(cam, p, n, 1);
  // plane through (0,0,3) with normal (sin t, 0, cos t) in the camera frame
  const double t = deg2rad(30.0);
  const Vec3 normal(std::sin(t), 0.0, std::cos(t));
  for (int y = 0; y < cam.height; y += 7) {
    for (int x = 0; x < cam.width; x += 5) {
      const Vec3 ray((x - cam.cx) / cam.fx, (y - cam.cy) / cam.fy, 1.0);
      const double z = normal.dot(Vec3(0, 0, 3)) / normal.dot(ray);
      ASSERT_TRUE(d.truth.valid(x, y));
      EXPECT_NEAR(d.truth.at(x, y), z, 1e-12);
    }
  }
}

TEST(DepthPair, MvsNoiseScalesWithDepthSquared) {
  NoiseModel n;
  n.mvs_noise_coeff = 0.01;  // std 0.04 at depth 2, 4.0 at depth 20
  for (auto [depth, want] : {std::pair{2.0, 0.04}, std::pair{20.0, 4.0}}) {
    const ScenePreset p = single_plane(depth);
    double sq = 0.0;
    std::size_t count = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto d = generate_depth_pair(p.intrinsics(), p, n, seed);
      for (std::size_t k = 0; k < d.truth.size(); ++k) {
        if (!d.mvs.valid(k)) continue;
        sq += (d.mvs[k] - d.truth[k]) * (d.mvs[k] - d.truth[k]);
        ++count;
      }
    }
    EXPECT_NEAR(std::sqrt(sq / count), want, 0.03 * want) << "depth " << depth;
  }
}

TEST(DepthPair, MvsCutoffAndConfidence) {
  NoiseModel n;
  n.mvs_max_depth = 10.0;
  const ScenePreset p;
  const auto d = generate_depth_pair(p.intrinsics(), p, n, 4);
  for (std::size_t k = 0; k < d.truth.size(); ++k) {
    if (d.truth[k] > 10.0) {
      EXPECT_FALSE(d.mvs.valid(k));
      EXPECT_EQ(d.mvs_conf[k], 0.0);
    } else {
      const double sd = n.mvs_noise_coeff * d.truth[k] * d.truth[k];
      EXPECT_NEAR(d.mvs_conf[k], std::exp(-sd / n.mvs_conf_scale), 1e-12);
    }
  }
}

TEST(DepthPair, StereoAndMonocularAreComplementary) {
  const ScenePreset p;
  const NoiseModel n;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto d = generate_depth_pair(p.intrinsics(), p, n, seed);
    const auto fit = align_scale(d.mono, d.mvs, d.mvs_conf, 0.5);
    const DepthMap mono = apply_scale(d.mono, fit);
    double mvs_near = 0, mono_near = 0, mvs_far = 0, mono_far = 0;
    std::size_t nn = 0, nf = 0;
    for (std::size_t k = 0; k < d.truth.size(); ++k) {
      const double em = d.mvs[k] - d.truth[k], eo = mono[k] - d.truth[k];
      if (d.truth[k] < 5.0) {
        mvs_near += em * em, mono_near += eo * eo, ++nn;
      } else {
        mvs_far += em * em, mono_far += eo * eo, ++nf;
      }
    }
    ASSERT_GT(nn, 0u);
    ASSERT_GT(nf, 0u);
    EXPECT_LT(mvs_near / nn, mono_near / nn) << "seed " << seed;
    EXPECT_LT(mono_far / nf, mvs_far / nf) << "seed " << seed;
  }
}

TEST(DepthPair, Deterministic) {
  const ScenePreset p;
  NoiseModel n;
  n.mono_outlier_fraction = 0.05;
  const auto a = generate_depth_pair(p.intrinsics(), p, n, 9);
  const auto b = generate_depth_pair(p.intrinsics(), p, n, 9);
  EXPECT_EQ(encode_dfmp(a.mvs), encode_dfmp(b.mvs));
  EXPECT_EQ(encode_dfmp(a.mono), encode_dfmp(b.mono));
  EXPECT_EQ(encode_dfmp(a.mvs_conf), encode_dfmp(b.mvs_conf));
}

TEST(Config, PresetAndNoiseKeys) {
  auto kv = KeyValueConfig::parse(
      "# scene\ncamera_count = 8\nring_radius = 4\nplane.0 = 3 2 0 10\nplane.1 = 30 1000 0 0\n"
      "edge_noise_deg = 2\noutlier_fraction = 0.2\nmono_scale = 2\n");
  ScenePreset p;
  NoiseModel n;
  read_preset(kv, p);
  read_noise(kv, n);
  kv.require_consumed();
  EXPECT_EQ(p.camera_count, 8);
  EXPECT_EQ(p.ring_radius, 4.0);
  ASSERT_EQ(p.planes.size(), 2u);
  EXPECT_EQ(p.planes[0].tilt_deg, 10.0);
  EXPECT_NEAR(n.edge_noise_sigma, deg2rad(2.0), 1e-15);
  EXPECT_EQ(n.outlier_fraction, 0.2);
  EXPECT_EQ(n.mono_scale, 2.0);
}

TEST(Config, Errors) {
  auto unknown = KeyValueConfig::parse("camera_count = 8\ncamra_count = 9\n");
  ScenePreset p;
  read_preset(unknown, p);
  EXPECT_THROW(unknown.require_consumed(), ConfigError);

  auto bad_plane = KeyValueConfig::parse("plane.0 = 3 2 x 10\n");
  EXPECT_THROW(read_preset(bad_plane, p), ConfigError);

  auto bad_num = KeyValueConfig::parse("outlier_fraction = lots\n");
  NoiseModel n;
  EXPECT_THROW(read_noise(bad_num, n), ConfigError);

  EXPECT_THROW(KeyValueConfig::parse("a = 1\na = 2\n"), ParseError);
  EXPECT_THROW(KeyValueConfig::parse("novalue\n"), ParseError);

  auto order = KeyValueConfig::parse("plane.0 = 20 5 0 0\nplane.1 = 2 5 0 0\n");
  read_preset(order, p);
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(Fig4, ZeroNoiseGivesExactPoses) {
  PoseExperimentConfig cfg;
  cfg.noise.edge_noise_sigma = 0.0;
  cfg.noise.outlier_fraction = 0.0;
  cfg.seeds = 3;
  cfg.run_mpnn = false;
  const auto res = run_fig4_experiment(cfg);
  for (const auto& r : res.rows) {
    EXPECT_LT(r.init.max_deg, 1e-6);
    EXPECT_LT(r.average.max_deg, 1e-6);
    EXPECT_EQ(r.flagged, 0u);
  }
}

TEST(Fig4, AveragingBeatsInitOnEverySeed) {
  PoseExperimentConfig cfg;
  cfg.run_mpnn = false;
  const auto res = run_fig4_experiment(cfg);
  ASSERT_EQ(res.rows.size(), 20u);
  for (const auto& r : res.rows) {
    EXPECT_LT(r.average.median_deg, r.init.median_deg) << "seed " << r.seed;
    EXPECT_GE(r.recall, 0.9) << "seed " << r.seed;
  }
  EXPECT_EQ(res.report["per_seed"].size(), 20u);
  EXPECT_FALSE(res.report["summary"].contains("mean_median_deg_mpnn"));
  EXPECT_EQ(res.csv.substr(0, res.csv.find('\n')), "seed,method,mean_deg,median_deg,max_deg");
  EXPECT_EQ(std::count(res.csv.begin(), res.csv.end(), '\n'), 41);
}

TEST(Fig4, ConfigFromKeys) {
  auto kv = KeyValueConfig::parse("seeds = 2\ndensity = 0.7\nrun_mpnn = false\nhidden = 6\n");
  const auto cfg = PoseExperimentConfig::from(kv);
  kv.require_consumed();
  EXPECT_EQ(cfg.seeds, 2);
  EXPECT_EQ(cfg.density, 0.7);
  EXPECT_FALSE(cfg.run_mpnn);
  EXPECT_EQ(cfg.hidden, 6);
  PoseExperimentConfig bad;
  bad.density = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Fig6, ZeroNoiseGivesExactDepth) {
  DepthExperimentConfig cfg;
  cfg.noise.mvs_noise_coeff = 0.0;
  cfg.noise.mono_noise_sigma = 0.0;
  cfg.seeds = 3;
  const auto res = run_fig6_experiment(cfg);
  for (const auto& r : res.rows) {
    EXPECT_LT(r.mvs.rmse, 1e-6);
    EXPECT_LT(r.mono.rmse, 1e-6);
    EXPECT_LT(r.fused.rmse, 1e-6);
  }
}

TEST(Fig6, FusedIsBestOnEverySeed) {
  const auto res = run_fig6_experiment(DepthExperimentConfig{});
  ASSERT_EQ(res.rows.size(), 20u);
  for (const auto& r : res.rows) {
    EXPECT_LE(r.fused.rmse, std::min(r.mvs.rmse, r.mono.rmse)) << "seed " << r.seed;
  }
  EXPECT_EQ(res.report["summary"]["seeds_fused_best"], 20);
  EXPECT_EQ(res.csv.substr(0, res.csv.find('\n')), "seed,method,rmse,abs_rel,valid_fraction");
}

TEST(Fig6, SigmaSweepShape) {
  DepthExperimentConfig cfg;
  cfg.seeds = 2;
  const std::string csv = run_sigma_sweep(cfg, default_sigma_grid());
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "sigma,rmse_mvs,rmse_mono_aligned,rmse_fused,mono_fraction");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
  EXPECT_NE(csv.find("\n" + format_double(0.66) + ","), std::string::npos);
}

}  // namespace
}  // namespace esvs
