#pragma once

// Monte Carlo reproductions over the synthetic harness.
//
// Pose experiment, per seed: generate a ring and a noisy graph, run the
// cycle filter, then compare
//   init     spanning-tree initialization of the filtered graph
//   average  robust_average started from `init`
//   mpnn     MPNN trained on `init` and applied to it
// against ground truth after gauge alignment.
//
// Depth experiment, per seed: align the monocular map to MVS, classify,
// fuse, and compare MVS / aligned mono / fused against the truth.

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "esvs/config.hpp"
#include "esvs/depth_fusion.hpp"
#include "esvs/harness.hpp"
#include "esvs/mpnn.hpp"
#include "esvs/rotation_averaging.hpp"
#include "esvs/viewgraph.hpp"

namespace esvs {

using Json = nlohmann::ordered_json;

inline Json to_json(const PoseErrorStats& s) {
  return {{"mean_deg", s.mean_deg}, {"median_deg", s.median_deg}, {"max_deg", s.max_deg}};
}

inline Json to_json(const DepthErrorStats& s) {
  return {{"rmse", s.rmse}, {"abs_rel", s.abs_rel}, {"valid_fraction", s.valid_fraction}};
}

/// Pose errors after aligning `est` to `truth` by the best global rotation.
inline PoseErrorStats aligned_pose_errors(const ViewGraph& est, const ViewGraph& truth) {
  return pose_error_stats(gauge_align(est, truth), truth);
}

// ---------------------------------------------------------------------------
// Pose experiment

struct PoseExperimentConfig {
  ScenePreset preset;
  NoiseModel noise;
  double density = 0.5;
  int seeds = 20;
  std::uint64_t seed = 42;             // first seed; the rest follow consecutively
  double filter_threshold_deg = 15.0;
  AveragingConfig averaging;
  bool run_mpnn = true;
  int hidden = 8;
  int steps = 2;
  TrainConfig train;

  void validate() const {
    preset.validate();
    noise.validate();
    averaging.validate();
    train.validate();
    if (!(density > 0.0 && density <= 1.0)) throw ConfigError("density must lie in (0, 1]");
    if (seeds < 1) throw ConfigError("seeds must be >= 1");
    if (!(filter_threshold_deg > 0.0)) throw ConfigError("filter_threshold_deg must be > 0");
    if (hidden < 4 || steps < 0) throw ConfigError("hidden must be >= 4 and steps >= 0");
  }

  static PoseExperimentConfig from(KeyValueConfig& kv) {
    PoseExperimentConfig c;
    read_preset(kv, c.preset);
    read_noise(kv, c.noise);
    kv.get("density", c.density);
    kv.get("seeds", c.seeds);
    kv.get("filter_threshold_deg", c.filter_threshold_deg);
    kv.get("max_iters", c.averaging.max_iters);
    kv.get("step_tolerance", c.averaging.step_tolerance);
    kv.get("irls_epsilon", c.averaging.irls_epsilon);
    kv.get("beta", c.averaging.beta);
    kv.get("run_mpnn", c.run_mpnn);
    kv.get("hidden", c.hidden);
    kv.get("steps", c.steps);
    kv.get("iterations", c.train.iterations);
    kv.get("learning_rate", c.train.learning_rate);
    kv.get("beta_reg", c.train.beta_reg);
    return c;
  }
};

struct PoseSeedResult {
  std::uint64_t seed = 0;
  std::size_t edges = 0;
  std::size_t injected = 0;
  std::size_t flagged = 0;
  double recall = 1.0;
  double precision = 1.0;
  PoseErrorStats init, average, mpnn;
  AveragingReport averaging;
  double lmra_before = 0.0;
  double lmra_after = 0.0;
};

struct PoseExperimentResult {
  std::vector<PoseSeedResult> rows;
  Json report;
  std::string csv;
};

inline PoseSeedResult run_pose_seed(const PoseExperimentConfig& cfg, std::uint64_t seed) {
  ScenePreset preset = cfg.preset;
  preset.seed = seed;
  const auto cams = generate_cameras(preset);
  const auto gen = generate_pose_graph(cams, cfg.noise, cfg.density, seed);

  PoseSeedResult r;
  r.seed = seed;
  r.edges = gen.noisy.edge_count();
  const ViewGraph filtered =
      cycle_consistency_filter(gen.noisy, deg2rad(cfg.filter_threshold_deg));
  std::size_t hit = 0;
  for (std::size_t e = 0; e < r.edges; ++e) {
    const bool f = filtered.edges()[e].outlier;
    r.injected += gen.outlier[e];
    r.flagged += f;
    hit += f && gen.outlier[e];
  }
  if (r.injected) r.recall = double(hit) / r.injected;
  if (r.flagged) r.precision = double(hit) / r.flagged;

  const ViewGraph init = init_absolute_rotations(filtered, min_spanning_tree(filtered));
  r.init = aligned_pose_errors(init, gen.truth);

  const auto [averaged, report] = robust_average(init, cfg.averaging);
  r.averaging = report;
  r.average = aligned_pose_errors(averaged, gen.truth);

  if (cfg.run_mpnn) {
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(seed, 4);
    const auto trained = train(init, init, cfg.hidden, cfg.steps, tc);
    r.lmra_before = trained.loss_trace.front();
    r.lmra_after = trained.loss_trace.back();
    r.mpnn = aligned_pose_errors(forward(init, trained.params), gen.truth);
  }
  return r;
}

inline PoseExperimentResult run_fig4_experiment(const PoseExperimentConfig& cfg) {
  cfg.validate();
  PoseExperimentResult out;
  std::ostringstream csv;
  csv << "seed,method,mean_deg,median_deg,max_deg\n";
  Json seeds = Json::array();
  double sum_init = 0, sum_avg = 0, sum_mpnn = 0, min_recall = 1, min_precision = 1;
  for (int k = 0; k < cfg.seeds; ++k) {
    const auto r = run_pose_seed(cfg, cfg.seed + static_cast<std::uint64_t>(k));
    auto row = [&](const char* m, const PoseErrorStats& s) {
      csv << r.seed << "," << m << "," << format_double(s.mean_deg) << ","
          << format_double(s.median_deg) << "," << format_double(s.max_deg) << "\n";
    };
    row("init", r.init);
    row("average", r.average);
    Json js = {{"seed", r.seed},
               {"edges", r.edges},
               {"injected_outliers", r.injected},
               {"flagged", r.flagged},
               {"recall", r.recall},
               {"precision", r.precision},
               {"init", to_json(r.init)},
               {"average", to_json(r.average)},
               {"averaging_iterations", r.averaging.iterations_run},
               {"averaging_converged", r.averaging.converged}};
    if (cfg.run_mpnn) {
      row("mpnn", r.mpnn);
      js["mpnn"] = to_json(r.mpnn);
      js["lmra_before"] = r.lmra_before;
      js["lmra_after"] = r.lmra_after;
    }
    seeds.push_back(std::move(js));
    sum_init += r.init.median_deg;
    sum_avg += r.average.median_deg;
    sum_mpnn += r.mpnn.median_deg;
    min_recall = std::min(min_recall, r.recall);
    min_precision = std::min(min_precision, r.precision);
    out.rows.push_back(r);
  }
  const double n = cfg.seeds;
  Json summary = {{"mean_median_deg_init", sum_init / n},
                  {"mean_median_deg_average", sum_avg / n}};
  if (cfg.run_mpnn) summary["mean_median_deg_mpnn"] = sum_mpnn / n;
  summary["min_recall"] = min_recall;
  summary["min_precision"] = min_precision;
  out.report = {{"experiment", "pose"},
                {"config",
                 {{"camera_count", cfg.preset.camera_count},
                  {"edge_noise_deg", rad2deg(cfg.noise.edge_noise_sigma)},
                  {"outlier_fraction", cfg.noise.outlier_fraction},
                  {"density", cfg.density},
                  {"seeds", cfg.seeds},
                  {"first_seed", cfg.seed},
                  {"filter_threshold_deg", cfg.filter_threshold_deg},
                  {"mpnn", cfg.run_mpnn}}},
                {"summary", summary},
                {"per_seed", seeds}};
  out.csv = csv.str();
  return out;
}

// ---------------------------------------------------------------------------
// Depth experiment

struct DepthExperimentConfig {
  ScenePreset preset;
  NoiseModel noise;
  FusionConfig fusion;
  int seeds = 20;
  std::uint64_t seed = 42;

  void validate() const {
    preset.validate();
    noise.validate();
    fusion.validate();
    if (seeds < 1) throw ConfigError("seeds must be >= 1");
  }

  static DepthExperimentConfig from(KeyValueConfig& kv) {
    DepthExperimentConfig c;
    read_preset(kv, c.preset);
    read_noise(kv, c.noise);
    kv.get("seeds", c.seeds);
    kv.get("tau", c.fusion.tau);
    kv.get("sigma", c.fusion.sigma);
    kv.get("conf_floor", c.fusion.conf_floor);
    kv.get("shift", c.fusion.shift);
    return c;
  }
};

struct DepthSeedResult {
  std::uint64_t seed = 0;
  ScaleFit fit;
  DepthErrorStats mvs, mono, fused;
  std::size_t counts[4] = {0, 0, 0, 0};  // indexed by Provenance
};

inline DepthSeedResult run_depth_seed(const DepthExperimentConfig& cfg, std::uint64_t seed) {
  const PinholeCamera cam = cfg.preset.intrinsics();
  const auto pair = generate_depth_pair(cam, cfg.preset, cfg.noise, seed);
  DepthSeedResult r;
  r.seed = seed;
  r.fit = align_scale(pair.mono, pair.mvs, pair.mvs_conf, cfg.fusion.conf_floor, cfg.fusion.shift);
  const DepthMap mono = apply_scale(pair.mono, r.fit);
  const auto mask = classify_pixels(pair.mvs, mono, pair.mono_conf, cfg.fusion);
  const DepthMap fused = fuse(pair.mvs, mono, mask, pair.mono_conf, pair.mvs_conf);
  r.mvs = depth_error_stats(pair.mvs, pair.truth);
  r.mono = depth_error_stats(mono, pair.truth);
  r.fused = depth_error_stats(fused, pair.truth);
  for (int p = 0; p < 4; ++p) r.counts[p] = mask.count(static_cast<Provenance>(p));
  return r;
}

struct DepthExperimentResult {
  std::vector<DepthSeedResult> rows;
  Json report;
  std::string csv;
};

inline DepthExperimentResult run_fig6_experiment(const DepthExperimentConfig& cfg) {
  cfg.validate();
  DepthExperimentResult out;
  std::ostringstream csv;
  csv << "seed,method,rmse,abs_rel,valid_fraction\n";
  Json seeds = Json::array();
  double sm = 0, so = 0, sf = 0;
  std::size_t fused_best = 0;
  for (int k = 0; k < cfg.seeds; ++k) {
    const auto r = run_depth_seed(cfg, cfg.seed + static_cast<std::uint64_t>(k));
    auto row = [&](const char* m, const DepthErrorStats& s) {
      csv << r.seed << "," << m << "," << format_double(s.rmse) << "," << format_double(s.abs_rel)
          << "," << format_double(s.valid_fraction) << "\n";
    };
    row("mvs", r.mvs);
    row("mono_aligned", r.mono);
    row("fused", r.fused);
    seeds.push_back({{"seed", r.seed},
                     {"scale", r.fit.scale},
                     {"shift", r.fit.shift},
                     {"inliers", r.fit.inlier_count},
                     {"mvs", to_json(r.mvs)},
                     {"mono_aligned", to_json(r.mono)},
                     {"fused", to_json(r.fused)},
                     {"pixels",
                      {{"MVS", r.counts[0]},
                       {"MONO", r.counts[1]},
                       {"BLEND", r.counts[2]},
                       {"INVALID", r.counts[3]}}}});
    sm += r.mvs.rmse;
    so += r.mono.rmse;
    sf += r.fused.rmse;
    fused_best += r.fused.rmse <= std::min(r.mvs.rmse, r.mono.rmse);
    out.rows.push_back(r);
  }
  const double n = cfg.seeds;
  out.report = {{"experiment", "depth"},
                {"config",
                 {{"tau", cfg.fusion.tau},
                  {"sigma", cfg.fusion.sigma},
                  {"mvs_noise_coeff", cfg.noise.mvs_noise_coeff},
                  {"mono_noise_sigma", cfg.noise.mono_noise_sigma},
                  {"seeds", cfg.seeds},
                  {"first_seed", cfg.seed}}},
                {"summary",
                 {{"mean_rmse_mvs", sm / n},
                  {"mean_rmse_mono_aligned", so / n},
                  {"mean_rmse_fused", sf / n},
                  {"seeds_fused_best", fused_best}}},
                {"per_seed", seeds}};
  out.csv = csv.str();
  return out;
}

inline const std::vector<double>& default_sigma_grid() {
  static const std::vector<double> grid{0.25, 0.5, 0.66, 1.0, 1.25, 1.5, 2.0};
  return grid;
}

/// Mean RMSE per method for every σ in `sigmas`, as CSV.
inline std::string run_sigma_sweep(DepthExperimentConfig cfg, const std::vector<double>& sigmas) {
  std::ostringstream csv;
  csv << "sigma,rmse_mvs,rmse_mono_aligned,rmse_fused,mono_fraction\n";
  for (double s : sigmas) {
    cfg.fusion.sigma = s;
    const auto res = run_fig6_experiment(cfg);
    double m = 0, o = 0, f = 0, mono_frac = 0;
    for (const auto& r : res.rows) {
      m += r.mvs.rmse;
      o += r.mono.rmse;
      f += r.fused.rmse;
      const double total = r.counts[0] + r.counts[1] + r.counts[2] + r.counts[3];
      mono_frac += r.counts[1] / total;
    }
    const double n = res.rows.size();
    csv << format_double(s) << "," << format_double(m / n) << "," << format_double(o / n) << ","
        << format_double(f / n) << "," << format_double(mono_frac / n) << "\n";
  }
  return csv.str();
}

}  // namespace esvs
