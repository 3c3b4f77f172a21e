// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "esvs/camera.hpp"
#include "esvs/depth_fusion.hpp"
#include "esvs/experiments.hpp"
#include "esvs/harness.hpp"
#include "esvs/mpnn.hpp"
#include "esvs/ray_aggregation.hpp"
#include "esvs/rng.hpp"
#include "esvs/rotation_averaging.hpp"
#include "esvs/so3.hpp"
#include "esvs/viewgraph.hpp"

#ifndef ESVS_CLI
#error "ESVS_CLI must name the command-line binary"
#endif
#ifndef ESVS_TEST_DIR
#error "ESVS_TEST_DIR must name the tests directory"
#endif

namespace {

using namespace esvs;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail << "first failure: " << what << "; ";
    pass = pass && ok;
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. SO(3) metric and group

Mat3 matrix_oracle(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  w /= n, x /= n, y /= n, z /= n;
  Mat3 m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return m;
}

double trace_angle(const Mat3& a, const Mat3& b) {
  const double c = ((a.transpose() * b).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

void criterion_so3(Outcome& o) {
  Rng rng(1);
  double worst_metric = 0, worst_roundtrip = 0, worst_triangle = -1e300;
  for (int k = 0; k < 1000; ++k) {
    double qa[4], qb[4];
    for (double& v : qa) v = rng.normal();
    for (double& v : qb) v = rng.normal();
    const Rotation a(qa[0], qa[1], qa[2], qa[3]), b(qb[0], qb[1], qb[2], qb[3]);
    const Mat3 ma = matrix_oracle(qa[0], qa[1], qa[2], qa[3]);
    const Mat3 mb = matrix_oracle(qb[0], qb[1], qb[2], qb[3]);
    worst_metric = std::max(worst_metric, std::abs(geodesic_distance(a, b) - trace_angle(ma, mb)));
    worst_roundtrip = std::max(worst_roundtrip, (a.matrix() - ma).cwiseAbs().maxCoeff());
    worst_roundtrip = std::max(worst_roundtrip,
                               (Rotation::from_matrix(ma).coeffs() - a.coeffs()).cwiseAbs().maxCoeff());
    const Rotation c = rng.rotation();
    worst_triangle = std::max(worst_triangle, geodesic_distance(a, c) - geodesic_distance(a, b) -
                                                  geodesic_distance(b, c));
  }
  o.require(worst_metric < 1e-7, "geodesic distance vs trace oracle");
  o.require(worst_roundtrip < 1e-9, "quaternion/matrix round trip");
  o.require(worst_triangle <= 1e-12, "triangle inequality");
  o.detail << "max |d - d_trace| = " << worst_metric << ", max round-trip error = " << worst_roundtrip
           << ", max triangle excess = " << worst_triangle;
}

// ---------------------------------------------------------------------------
// 2. Noise-free recovery

void criterion_noise_free(Outcome& o) {
  double worst = 0, slowest = 0;
  int graphs = 0;
  for (int cameras : {30, 40, 50}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      ScenePreset preset;
      preset.camera_count = cameras;
      preset.seed = seed;
      NoiseModel noise;
      noise.edge_noise_sigma = 0.0;
      noise.outlier_fraction = 0.0;
      const auto gen = generate_pose_graph(generate_cameras(preset), noise, 0.3, seed);
      const auto t0 = Clock::now();
      const ViewGraph init = init_absolute_rotations(gen.noisy, min_spanning_tree(gen.noisy));
      const auto [est, report] = robust_average(init, AveragingConfig{});
      slowest = std::max(slowest, seconds_since(t0));
      const auto errs = pose_errors_deg(gauge_align(est, gen.truth), gen.truth);
      for (double e : errs) worst = std::max(worst, deg2rad(e));
      ++graphs;
    }
  }
  o.require(worst < 1e-6, "max aligned error below 1e-6 rad");
  o.require(slowest < 1.0, "each graph under 1 s");
  o.detail << graphs << " graphs of 30-50 nodes, max error = " << worst
           << " rad, slowest = " << slowest << " s";
}

// ---------------------------------------------------------------------------
// 3. Pose-recovery experiment

void criterion_fig4(Outcome& o) {
  const auto t0 = Clock::now();
  const auto res = run_fig4_experiment(PoseExperimentConfig{});
  const double elapsed = seconds_since(t0);
  double min_recall = 1, min_precision = 1, worst_ratio = 0, worst_mpnn = 0, worst_lmra = 0;
  for (const auto& r : res.rows) {
    min_recall = std::min(min_recall, r.recall);
    min_precision = std::min(min_precision, r.precision);
    worst_ratio = std::max(worst_ratio, r.average.median_deg / r.init.median_deg);
    worst_mpnn = std::max(worst_mpnn, r.mpnn.median_deg / r.init.median_deg);
    worst_lmra = std::max(worst_lmra, r.lmra_after / r.lmra_before);
  }
  o.require(res.rows.size() >= 20, "at least 20 seeds");
  o.require(min_recall >= 0.9, "outlier recall >= 0.9");
  o.require(min_precision >= 0.8, "outlier precision >= 0.8");
  o.require(worst_ratio <= 0.5, "averaged median error <= 0.5x init on every seed");
  o.require(worst_mpnn <= 1.0, "refined median error does not exceed init");
  o.require(worst_lmra <= 0.5, "L_mra reduced by at least 50%");
  o.require(elapsed < 120.0, "runtime under 2 min");
  o.detail << res.rows.size() << " seeds, min recall = " << min_recall
           << ", min precision = " << min_precision << ", max avg/init = " << worst_ratio
           << ", max mpnn/init = " << worst_mpnn << ", max L_mra after/before = " << worst_lmra
           << ", " << elapsed << " s";
}

// ---------------------------------------------------------------------------
// 4. Gradient correctness

template <class Params, class LossFn>
double worst_tensor_error(const Params& p, Params analytic, LossFn loss, int& tensors) {
  std::vector<std::vector<double>> fd;
  Params probe = p;
  probe.for_each_tensor([&](const char*, double* d, Eigen::Index n) {
    std::vector<double> g(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const double keep = d[k];
      constexpr double h = 1e-5;
      d[k] = keep + h;
      const double up = loss(probe);
      d[k] = keep - h;
      const double down = loss(probe);
      d[k] = keep;
      g[k] = (up - down) / (2 * h);
    }
    fd.push_back(std::move(g));
  });
  double worst = 0;
  std::size_t t = 0;
  analytic.for_each_tensor([&](const char*, const double* d, Eigen::Index n) {
    double diff = 0, na = 0, nf = 0;
    for (Eigen::Index k = 0; k < n; ++k) {
      diff += (d[k] - fd[t][k]) * (d[k] - fd[t][k]);
      na += d[k] * d[k];
      nf += fd[t][k] * fd[t][k];
    }
    worst = std::max(worst, std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nf), 1e-8}));
    ++t;
    ++tensors;
  });
  return worst;
}

void criterion_gradients(Outcome& o) {
  const auto t0 = Clock::now();
  double worst_mpnn = 0, worst_hybrid = 0;
  int mpnn_tensors = 0, hybrid_tensors = 0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ScenePreset preset;
    preset.camera_count = 5;
    NoiseModel noise;
    noise.edge_noise_sigma = deg2rad(8.0);
    noise.outlier_fraction = 0.0;
    const auto gen = generate_pose_graph(generate_cameras(preset), noise, 0.8, seed);
    const ViewGraph g = init_absolute_rotations(gen.noisy, min_spanning_tree(gen.noisy));
    Rng rng(100 + seed);
    const MpnnParams p = MpnnParams::random(8, 2, rng);
    const double beta = 0.1 * static_cast<double>(seed);
    const auto analytic = loss_and_gradients(g, g, p, beta);
    worst_mpnn = std::max(worst_mpnn, worst_tensor_error(p, analytic.grad, [&](const MpnnParams& q) {
                            return loss_and_gradients(g, g, q, beta).loss;
                          }, mpnn_tensors));

    VecX hm(8), hs(8);
    for (Eigen::Index k = 0; k < 8; ++k) hm[k] = rng.uniform(-1, 1), hs[k] = rng.uniform(-1, 1);
    const HybridParams hp = HybridParams::random(8, 8, rng);
    for (const auto& l : {Lambdas::blend(), Lambdas::stereo_only(), Lambdas::mono_only()}) {
      const auto ha = l_corr_and_gradients(hm, hs, hp, l);
      worst_hybrid = std::max(worst_hybrid, worst_tensor_error(hp, ha.grad, [&](const HybridParams& q) {
                                return l_corr(hybrid_aggregate(hm, hs, q), hm, hs, l);
                              }, hybrid_tensors));
    }
  }
  const double elapsed = seconds_since(t0);
  o.require(worst_mpnn < 1e-4, "MPNN tensors relative error < 1e-4");
  o.require(worst_hybrid < 1e-4, "hybrid tensors relative error < 1e-4");
  o.require(elapsed < 30.0, "runtime under 30 s");
  o.detail << mpnn_tensors << " MPNN tensor checks, worst = " << worst_mpnn << "; " << hybrid_tensors
           << " hybrid tensor checks, worst = " << worst_hybrid << "; " << elapsed << " s";
}

// ---------------------------------------------------------------------------
// 5. Gauge invariance

ViewGraph right_multiply(const ViewGraph& g, const Rotation& gauge) {
  ViewGraph out = g;
  for (const auto& v : g.vertices()) out.set_absolute(v.id, compose(g.absolute(v.id), gauge));
  return out;
}

void criterion_gauge(Outcome& o) {
  ScenePreset preset;
  NoiseModel noise;
  const auto gen = generate_pose_graph(generate_cameras(preset), noise, 0.5, 7);
  const ViewGraph init = init_absolute_rotations(gen.noisy, min_spanning_tree(gen.noisy));
  const ViewGraph est = robust_average(init, AveragingConfig{}).first;
  const double eps = AveragingConfig{}.irls_epsilon;
  const double obj0 = averaging_objective(est, eps), lmra0 = l_mra(est, init, 0.0);
  Rng rng(11);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    const Rotation gauge = rng.rotation();
    const ViewGraph moved = right_multiply(est, gauge);
    worst = std::max(worst, std::abs(averaging_objective(moved, eps) - obj0));
    worst = std::max(worst, std::abs(l_mra(moved, right_multiply(init, gauge), 0.0) - lmra0));
    worst = std::max(worst, std::abs(l_mra(moved, init, 0.0) - lmra0));
  }
  o.require(worst <= 1e-9, "objectives change by at most 1e-9");
  o.detail << "objective = " << obj0 << ", L_mra = " << lmra0 << ", max change over 100 gauges = " << worst;
}

// ---------------------------------------------------------------------------
// 6. Depth complementarity and alignment

void criterion_fig6(Outcome& o) {
  const auto t0 = Clock::now();
  const auto res = run_fig6_experiment(DepthExperimentConfig{});
  std::size_t fused_best = 0;
  for (const auto& r : res.rows) fused_best += r.fused.rmse <= std::min(r.mvs.rmse, r.mono.rmse);
  o.require(res.rows.size() >= 20, "at least 20 seeds");
  o.require(fused_best == res.rows.size(), "fused RMSE <= min(MVS, aligned mono) on every seed");

  ScenePreset preset;
  NoiseModel noise;
  noise.mono_outlier_fraction = 0.05;
  noise.mono_noise_sigma = 0.0;
  double worst_s = 0, worst_t = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto d = generate_depth_pair(preset.intrinsics(), preset, noise, seed);
    const auto fit = align_scale(d.mono, d.mvs, d.mvs_conf, FusionConfig{}.conf_floor);
    worst_s = std::max(worst_s, std::abs(fit.scale / noise.mono_scale - 1.0));
    worst_t = std::max(worst_t, std::abs(fit.shift / noise.mono_shift - 1.0));
  }
  const double elapsed = seconds_since(t0);
  o.require(worst_s <= 0.01 && worst_t <= 0.01, "(s, t) recovered within 1% with 5% outliers");
  o.require(elapsed < 10.0, "runtime under 10 s");
  o.detail << "fused best on " << fused_best << "/" << res.rows.size()
           << " seeds, worst relative error in s = " << worst_s << ", in t = " << worst_t << ", "
           << elapsed << " s";
}

// ---------------------------------------------------------------------------
// 7. Aggregation and warping oracles

void criterion_aggregation(Outcome& o) {
  Rng rng(21);
  double worst_dir = 0, worst_conf = 0;
  for (int point = 0; point < 1000; ++point) {
    SurfacePointSample s;
    const int views = 1 + static_cast<int>(rng.index(8));
    const int dim = 1 + static_cast<int>(rng.index(6));
    for (int k = 0; k < views; ++k) {
      Observation obs;
      obs.view = k;
      obs.direction = rng.normal3(1.0).normalized();
      obs.feature = VecX(dim);
      for (int c = 0; c < dim; ++c) obs.feature[c] = rng.uniform(-2, 2);
      obs.confidence = rng.uniform();
      s.observations.push_back(obs);
    }
    const Vec3 u = rng.normal3(1.0).normalized();

    std::vector<double> num(dim, 0.0), acc(dim, 0.0);
    double den = 0, csum = 0;
    for (const auto& obs : s.observations) {
      const double w = std::max(0.0, u[0] * obs.direction[0] + u[1] * obs.direction[1] +
                                         u[2] * obs.direction[2]);
      for (int c = 0; c < dim; ++c) {
        num[c] += w * obs.feature[c];
        acc[c] += obs.confidence * obs.feature[c];
      }
      den += w;
      csum += obs.confidence;
    }
    const auto dir = directional_aggregate(u, s);
    const VecX conf = confidence_aggregate(s), conf_n = confidence_aggregate(s, true);
    for (int c = 0; c < dim; ++c) {
      const double want = den > 1e-12 ? num[c] / den : 0.0;
      worst_dir = std::max(worst_dir, std::abs(dir.feature[c] - want));
      worst_conf = std::max(worst_conf, std::abs(conf[c] - acc[c]));
      worst_conf = std::max(worst_conf, std::abs(conf_n[c] - acc[c] / csum));
    }
  }
  o.require(worst_dir <= 1e-12, "directional aggregate matches loop oracle");
  o.require(worst_conf <= 1e-12, "confidence aggregate matches loop oracle");

  PinholeCamera cam;
  cam.fx = cam.fy = 60;
  cam.cx = 32;
  cam.cy = 24;
  cam.width = 64;
  cam.height = 48;
  FeatureMap feats(64, 48, 2);
  DepthMap depth(64, 48);
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x < 64; ++x) {
      feats.at(x, y, 0) = x;
      feats.at(x, y, 1) = y;
      depth.set(x, y, 2.0 + 0.05 * x + 0.02 * y);
    }
  }
  const auto same = forward_warp(cam, cam, feats, depth);
  bool identity_exact = true;
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x < 64; ++x) {
      identity_exact = identity_exact && same.coverage.valid(x, y) &&
                       same.features.at(x, y, 0) == x && same.features.at(x, y, 1) == y;
    }
  }
  o.require(identity_exact, "identity-pose warp is exact");

  double worst_disp = 0;
  std::size_t checked = 0;
  for (double z : {5.0, 10.0, 40.0}) {
    for (double b : {0.5, -0.75, 1.5, 0.33}) {
      DepthMap flat(64, 48);
      for (std::size_t k = 0; k < flat.size(); ++k) flat.set(k, z);
      const auto dst = PinholeCamera::with_center(cam, Rotation(), Vec3(b, 0, 0));
      const auto w = forward_warp(cam, dst, feats, flat);
      const double disparity = cam.fx * b / z;
      for (int y = 0; y < 48; ++y) {
        for (int x = 0; x < 64; ++x) {
          if (!w.coverage.valid(x, y)) continue;
          const double src_x = w.features.at(x, y, 0);
          worst_disp = std::max(worst_disp, std::abs((src_x - disparity) - x));
          worst_disp = std::max(worst_disp, std::abs(w.features.at(x, y, 1) - y));
          ++checked;
        }
      }
    }
  }
  o.require(checked > 0 && worst_disp <= 0.5, "fronto-parallel warp follows fx*b/Z");
  o.detail << "1000 points, max directional error = " << worst_dir
           << ", max confidence error = " << worst_conf << ", " << checked
           << " warped pixels within " << worst_disp << " px of fx*b/Z";
}

// ---------------------------------------------------------------------------
// 8. Constants and sensitivity sweep

void criterion_constants(Outcome& o) {
  const FusionConfig f;
  const TrainConfig t;
  o.require(f.tau == 0.05, "tau default 0.05");
  o.require(f.sigma == 0.66, "sigma default 0.66");
  o.require(t.learning_rate == 1e-3 && t.beta1 == 0.9 && t.beta2 == 0.999 && t.adam_epsilon == 1e-8,
            "Adam defaults (1e-3, 0.9, 0.999, 1e-8)");
  const auto& grid = default_sigma_grid();
  for (double s : {0.25, 0.5, 0.66, 1.0, 1.5, 2.0}) {
    o.require(std::find(grid.begin(), grid.end(), s) != grid.end(), "sweep grid covers the sigma list");
  }
  DepthExperimentConfig cfg;
  cfg.seeds = 3;
  const std::string csv = run_sigma_sweep(cfg, grid);
  const auto lines = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n'));
  o.require(lines == grid.size() + 1, "sweep CSV has a row per sigma");
  o.detail << "tau = " << f.tau << ", sigma = " << f.sigma << ", Adam = (" << t.learning_rate << ", "
           << t.beta1 << ", " << t.beta2 << ", " << t.adam_epsilon << "), sweep rows = " << lines - 1;
}

// ---------------------------------------------------------------------------
// 9. End-to-end determinism

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void criterion_determinism(Outcome& o) {
  const std::string dir = std::string(ESVS_TEST_DIR);
  const std::string golden = slurp(dir + "/golden/pipeline.jsonl");
  o.require(!golden.empty(), "golden file present");
  std::vector<std::string> runs;
  for (int k = 0; k < 2; ++k) {
    const std::string tag = "esvs_acceptance_run" + std::to_string(k);
    const std::string result = tag + ".jsonl";
    const std::string cmd = "cmake -DCLI=\"" + std::string(ESVS_CLI) + "\" -DWORK=" + tag +
                            " -DRESULT=" + result + " -P \"" + dir + "/pipeline.cmake\"";
    o.require(std::system(cmd.c_str()) == 0, "pipeline run " + std::to_string(k) + " succeeded");
    runs.push_back(slurp(result));
  }
  o.require(runs[0] == runs[1], "two runs agree byte for byte");
  o.require(runs[0] == golden, "runs match the committed golden file");
  o.detail << "2 runs, " << runs[0].size() << " bytes each, golden " << golden.size() << " bytes";
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria = {
      {"SO(3) metric and group", criterion_so3},
      {"noise-free recovery", criterion_noise_free},
      {"pose-recovery experiment", criterion_fig4},
      {"gradient correctness", criterion_gradients},
      {"gauge invariance", criterion_gauge},
      {"depth complementarity and alignment", criterion_fig6},
      {"aggregation and warping oracles", criterion_aggregation},
      {"constants and sigma sweep", criterion_constants},
      {"end-to-end determinism", criterion_determinism},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      criteria[k].second(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first,
                o.detail.str().c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed;
}
