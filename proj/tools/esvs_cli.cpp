// esvs: command-line front end for pose recovery, depth fusion and warping.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "esvs/binary_io.hpp"
#include "esvs/camera.hpp"
#include "esvs/config.hpp"
#include "esvs/depth_fusion.hpp"
#include "esvs/depth_map.hpp"
#include "esvs/experiments.hpp"
#include "esvs/harness.hpp"
#include "esvs/mpnn.hpp"
#include "esvs/ray_aggregation.hpp"
#include "esvs/rotation_averaging.hpp"
#include "esvs/viewgraph.hpp"

namespace {

using esvs::Json;

struct Globals {
  std::uint64_t seed = 42;
  std::string config;
  std::string out;
  bool json = false;
};

Globals G;

// Flat objects print as "key: value" lines; anything nested falls back to
// indented JSON.
void emit(const Json& j) {
  if (G.json) {
    std::cout << j.dump() << "\n";
    return;
  }
  for (const auto& [k, v] : j.items()) {
    if (v.is_structured()) {
      std::cout << k << ":\n" << v.dump(2) << "\n";
    } else if (v.is_string()) {
      std::cout << k << ": " << v.get<std::string>() << "\n";
    } else {
      std::cout << k << ": " << v.dump() << "\n";
    }
  }
}

esvs::KeyValueConfig load_config() {
  return G.config.empty() ? esvs::KeyValueConfig{} : esvs::KeyValueConfig::load(G.config);
}

const std::string& require_out(const char* what) {
  if (G.out.empty()) throw esvs::ConfigError(std::string(what) + " needs --out");
  return G.out;
}

esvs::ViewGraph read_graph(const std::string& path) {
  return esvs::parse_pose_graph(esvs::binio::read_file(path));
}

void write_graph(const std::string& path, const esvs::ViewGraph& g) {
  esvs::binio::write_file(path, esvs::serialize_pose_graph(g));
}

esvs::ViewGraph ensure_initialized(const esvs::ViewGraph& g, bool& initialized) {
  initialized = !g.fully_initialized();
  return initialized ? esvs::init_absolute_rotations(g, esvs::min_spanning_tree(g)) : g;
}

std::size_t outlier_count(const esvs::ViewGraph& g) {
  std::size_t n = 0;
  for (const auto& e : g.edges()) n += e.outlier;
  return n;
}

// Explicit flags win over config keys.
template <class T>
void override_with(CLI::Option* opt, const T& flag, T& target) {
  if (opt->count() > 0) target = flag;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-graph rotation averaging, depth fusion and feature warping."};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--seed", G.seed, "Random seed")->capture_default_str();
  app.add_option("--config", G.config, "Flat key = value configuration file");
  app.add_option("--out", G.out, "Primary output path");
  app.add_flag("--json", G.json, "Print the summary as one line of JSON");

  std::function<void()> run;

  // gen-graph
  auto* gen_graph = app.add_subcommand("gen-graph", "Generate a noisy pose graph on a camera ring");
  int gg_cameras = 30;
  double gg_density = 0.5, gg_noise = 5.0, gg_outliers = 0.1;
  std::string gg_truth;
  auto* gg_cameras_opt = gen_graph->add_option("--cameras", gg_cameras, "Camera count")->capture_default_str();
  auto* gg_density_opt = gen_graph->add_option("--density", gg_density, "Probability of a non-chain edge")->capture_default_str();
  auto* gg_noise_opt = gen_graph->add_option("--noise-deg", gg_noise, "Edge noise RMS angle in degrees")->capture_default_str();
  auto* gg_outliers_opt = gen_graph->add_option("--outlier-fraction", gg_outliers, "Fraction of edges replaced by random rotations")->capture_default_str();
  gen_graph->add_option("--truth", gg_truth, "Also write the ground-truth graph; corrupted edges carry OUTLIER");
  gen_graph->callback([&] {
    run = [&] {
      auto kv = load_config();
      esvs::ScenePreset preset;
      esvs::NoiseModel noise;
      double density = 0.5;
      esvs::read_preset(kv, preset);
      esvs::read_noise(kv, noise);
      kv.get("density", density);
      kv.require_consumed();
      override_with(gg_cameras_opt, gg_cameras, preset.camera_count);
      override_with(gg_density_opt, gg_density, density);
      if (gg_noise_opt->count()) noise.edge_noise_sigma = esvs::deg2rad(gg_noise);
      override_with(gg_outliers_opt, gg_outliers, noise.outlier_fraction);
      preset.seed = G.seed;
      preset.validate();
      const auto gen = esvs::generate_pose_graph(esvs::generate_cameras(preset), noise, density, G.seed);
      write_graph(require_out("gen-graph"), gen.noisy);
      std::size_t injected = 0;
      for (bool b : gen.outlier) injected += b;
      if (!gg_truth.empty()) {
        esvs::ViewGraph labeled;
        for (const auto& v : gen.truth.vertices()) labeled.add_vertex(v.id, v.absolute);
        for (std::size_t e = 0; e < gen.truth.edge_count(); ++e) {
          auto edge = gen.truth.edges()[e];
          edge.outlier = gen.outlier[e];
          labeled.add_edge(edge);
        }
        write_graph(gg_truth, labeled);
      }
      emit({{"vertices", gen.noisy.vertex_count()},
            {"edges", gen.noisy.edge_count()},
            {"outliers", injected}});
    };
  });

  // gen-depth
  auto* gen_depth = app.add_subcommand("gen-depth", "Generate truth, MVS and monocular depth maps into the --out directory");
  gen_depth->callback([&] {
    run = [&] {
      auto kv = load_config();
      esvs::ScenePreset preset;
      esvs::NoiseModel noise;
      esvs::read_preset(kv, preset);
      esvs::read_noise(kv, noise);
      kv.require_consumed();
      preset.validate();
      const std::filesystem::path dir = require_out("gen-depth");
      std::filesystem::create_directories(dir);
      const auto cam = preset.intrinsics();
      const auto d = esvs::generate_depth_pair(cam, preset, noise, G.seed);
      esvs::write_map((dir / "truth.dfmp").string(), d.truth);
      esvs::write_map((dir / "mvs.dfmp").string(), d.mvs);
      esvs::write_map((dir / "mvs_conf.dfmp").string(), d.mvs_conf);
      esvs::write_map((dir / "mono.dfmp").string(), d.mono);
      esvs::write_map((dir / "mono_conf.dfmp").string(), d.mono_conf);
      esvs::binio::write_file((dir / "camera.txt").string(), esvs::serialize_camera(cam) + "\n");
      emit({{"width", cam.width},
            {"height", cam.height},
            {"truth_valid", d.truth.valid_count()},
            {"mvs_valid", d.mvs.valid_count()},
            {"mono_valid", d.mono.valid_count()}});
    };
  });

  // init-poses
  auto* init_poses = app.add_subcommand("init-poses", "Initialize absolute rotations along a minimum spanning tree");
  std::string ip_graph;
  init_poses->add_option("graph", ip_graph, "Pose graph")->required();
  init_poses->callback([&] {
    run = [&] {
      const auto g = read_graph(ip_graph);
      const auto tree = esvs::min_spanning_tree(g);
      write_graph(require_out("init-poses"), esvs::init_absolute_rotations(g, tree));
      emit({{"vertices", g.vertex_count()}, {"root", tree.root}, {"tree_edges", tree.parent.size()}});
    };
  });

  // filter-cycles
  auto* filter = app.add_subcommand("filter-cycles", "Flag edges that break triangle consistency");
  std::string fc_graph;
  double fc_threshold = 10.0;
  filter->add_option("graph", fc_graph, "Pose graph")->required();
  filter->add_option("--threshold-deg", fc_threshold, "Cycle error threshold in degrees")->capture_default_str();
  filter->callback([&] {
    run = [&] {
      const auto g = read_graph(fc_graph);
      const auto f = esvs::cycle_consistency_filter(g, esvs::deg2rad(fc_threshold));
      write_graph(require_out("filter-cycles"), f);
      emit({{"edges", f.edge_count()},
            {"flagged", outlier_count(f)},
            {"newly_flagged", outlier_count(f) - outlier_count(g)}});
    };
  });

  // average
  auto* average = app.add_subcommand("average", "Robust rotation averaging");
  std::string av_graph, av_report;
  esvs::AveragingConfig av_cfg;
  double av_beta = av_cfg.beta;
  int av_iters = av_cfg.max_iters;
  average->add_option("graph", av_graph, "Pose graph; uninitialized graphs get a spanning-tree start")->required();
  auto* av_beta_opt = average->add_option("--beta", av_beta, "Anchor weight for the reported L_mra")->capture_default_str();
  auto* av_iters_opt = average->add_option("--max-iters", av_iters, "Sweep limit")->capture_default_str();
  average->add_option("--report", av_report, "Write the averaging report JSON here");
  average->callback([&] {
    run = [&] {
      auto kv = load_config();
      kv.get("beta", av_cfg.beta);
      kv.get("max_iters", av_cfg.max_iters);
      kv.get("step_tolerance", av_cfg.step_tolerance);
      kv.get("irls_epsilon", av_cfg.irls_epsilon);
      kv.get("damping", av_cfg.damping);
      kv.require_consumed();
      override_with(av_beta_opt, av_beta, av_cfg.beta);
      override_with(av_iters_opt, av_iters, av_cfg.max_iters);
      bool initialized = false;
      const auto start = ensure_initialized(read_graph(av_graph), initialized);
      const auto [est, rep] = esvs::robust_average(start, av_cfg);
      write_graph(require_out("average"), est);
      Json report = {{"iterations", rep.iterations_run},
                     {"objective_trace", rep.per_iteration_objective},
                     {"final_objective", rep.final_objective},
                     {"converged", rep.converged},
                     {"initialized_from_tree", initialized},
                     {"lmra", esvs::l_mra(est, start, av_cfg.beta)}};
      if (!av_report.empty()) esvs::binio::write_file(av_report, report.dump(2) + "\n");
      report.erase("objective_trace");
      emit(report);
    };
  });

  // refine-mpnn
  auto* refine = app.add_subcommand("refine-mpnn", "Train the message-passing refiner and apply it");
  std::string rm_graph, rm_params, rm_loss;
  int rm_hidden = 8, rm_steps = 2;
  esvs::TrainConfig rm_cfg;
  int rm_iters = rm_cfg.iterations;
  double rm_lr = rm_cfg.learning_rate, rm_beta = rm_cfg.beta_reg;
  refine->add_option("graph", rm_graph, "Pose graph; uninitialized graphs get a spanning-tree start")->required();
  refine->add_option("--hidden", rm_hidden, "Hidden state size")->capture_default_str();
  refine->add_option("--steps", rm_steps, "Message-passing steps")->capture_default_str();
  auto* rm_iters_opt = refine->add_option("--iters", rm_iters, "Adam iterations")->capture_default_str();
  auto* rm_lr_opt = refine->add_option("--lr", rm_lr, "Adam learning rate")->capture_default_str();
  auto* rm_beta_opt = refine->add_option("--beta", rm_beta, "Anchor weight in L_mra")->capture_default_str();
  refine->add_option("--params", rm_params, "Write the trained parameter blob here");
  refine->add_option("--loss-csv", rm_loss, "Write the loss trace CSV here");
  refine->callback([&] {
    run = [&] {
      auto kv = load_config();
      kv.get("iterations", rm_cfg.iterations);
      kv.get("learning_rate", rm_cfg.learning_rate);
      kv.get("beta_reg", rm_cfg.beta_reg);
      kv.get("hidden", rm_hidden);
      kv.get("steps", rm_steps);
      kv.require_consumed();
      override_with(rm_iters_opt, rm_iters, rm_cfg.iterations);
      override_with(rm_lr_opt, rm_lr, rm_cfg.learning_rate);
      override_with(rm_beta_opt, rm_beta, rm_cfg.beta_reg);
      rm_cfg.seed = G.seed;
      bool initialized = false;
      const auto init = ensure_initialized(read_graph(rm_graph), initialized);
      const auto res = esvs::train(init, init, rm_hidden, rm_steps, rm_cfg);
      write_graph(require_out("refine-mpnn"), esvs::forward(init, res.params));
      if (!rm_params.empty()) esvs::binio::write_file(rm_params, esvs::encode_mpnn(res.params));
      if (!rm_loss.empty()) esvs::binio::write_file(rm_loss, esvs::loss_trace_csv(res.loss_trace));
      emit({{"iterations", rm_cfg.iterations},
            {"loss_before", res.loss_trace.front()},
            {"loss_after", res.loss_trace.back()},
            {"parameters", res.params.parameter_count()},
            {"initialized_from_tree", initialized}});
    };
  });

  // align-scale
  auto* align = app.add_subcommand("align-scale", "Fit scale and shift of a monocular map to MVS depth");
  std::string as_mono, as_mvs, as_conf;
  double as_floor = esvs::FusionConfig{}.conf_floor;
  bool as_no_shift = false;
  align->add_option("mono", as_mono, "Monocular depth map")->required();
  align->add_option("mvs", as_mvs, "MVS depth map")->required();
  align->add_option("conf", as_conf, "MVS confidence map")->required();
  align->add_option("--conf-floor", as_floor, "Minimum MVS confidence used in the fit")->capture_default_str();
  align->add_flag("--no-shift", as_no_shift, "Fit scale only");
  align->callback([&] {
    run = [&] {
      const auto fit = esvs::align_scale(esvs::read_depth_map(as_mono), esvs::read_depth_map(as_mvs),
                                         esvs::read_confidence_map(as_conf), as_floor, !as_no_shift);
      emit({{"scale", fit.scale}, {"shift", fit.shift}, {"inliers", fit.inlier_count}});
    };
  });

  // fuse-depth
  auto* fuse = app.add_subcommand("fuse-depth", "Align monocular depth to MVS and fuse by confidence");
  std::string fd_mvs, fd_mono, fd_mono_conf, fd_mvs_conf, fd_mask;
  esvs::FusionConfig fd_cfg;
  double fd_tau = fd_cfg.tau, fd_sigma = fd_cfg.sigma, fd_floor = fd_cfg.conf_floor;
  bool fd_no_shift = false;
  fuse->add_option("mvs", fd_mvs, "MVS depth map")->required();
  fuse->add_option("mono", fd_mono, "Monocular depth map")->required();
  fuse->add_option("mono-conf", fd_mono_conf, "Monocular confidence map")->required();
  fuse->add_option("--mvs-conf", fd_mvs_conf, "MVS confidence map; 1 on valid MVS pixels when omitted");
  auto* fd_tau_opt = fuse->add_option("--tau", fd_tau, "Monocular confidence threshold")->capture_default_str();
  auto* fd_sigma_opt = fuse->add_option("--sigma", fd_sigma, "Far boundary as a fraction of median depth")->capture_default_str();
  auto* fd_floor_opt = fuse->add_option("--conf-floor", fd_floor, "Minimum MVS confidence used in alignment")->capture_default_str();
  fuse->add_flag("--no-shift", fd_no_shift, "Align by scale only");
  fuse->add_option("--mask", fd_mask, "Write the provenance mask here");
  fuse->callback([&] {
    run = [&] {
      auto kv = load_config();
      kv.get("tau", fd_cfg.tau);
      kv.get("sigma", fd_cfg.sigma);
      kv.get("conf_floor", fd_cfg.conf_floor);
      kv.get("shift", fd_cfg.shift);
      kv.require_consumed();
      override_with(fd_tau_opt, fd_tau, fd_cfg.tau);
      override_with(fd_sigma_opt, fd_sigma, fd_cfg.sigma);
      override_with(fd_floor_opt, fd_floor, fd_cfg.conf_floor);
      if (fd_no_shift) fd_cfg.shift = false;
      fd_cfg.validate();

      const auto mvs = esvs::read_depth_map(fd_mvs);
      const auto mono_raw = esvs::read_depth_map(fd_mono);
      const auto mono_conf = esvs::read_confidence_map(fd_mono_conf);
      esvs::ConfidenceMap mvs_conf(mvs.width(), mvs.height(), 0.0);
      if (fd_mvs_conf.empty()) {
        for (std::size_t k = 0; k < mvs.size(); ++k) {
          if (mvs.valid(k)) mvs_conf.set(k, 1.0);
        }
      } else {
        mvs_conf = esvs::read_confidence_map(fd_mvs_conf);
      }
      const auto fit = esvs::align_scale(mono_raw, mvs, mvs_conf, fd_cfg.conf_floor, fd_cfg.shift);
      const auto mono = esvs::apply_scale(mono_raw, fit);
      const auto mask = esvs::classify_pixels(mvs, mono, mono_conf, fd_cfg);
      const auto fused = esvs::fuse(mvs, mono, mask, mono_conf, mvs_conf);
      esvs::write_map(require_out("fuse-depth"), fused);
      if (!fd_mask.empty()) esvs::binio::write_file(fd_mask, esvs::encode_mask(mask));
      emit({{"scale", fit.scale},
            {"shift", fit.shift},
            {"pixels",
             {{"MVS", mask.count(esvs::Provenance::Mvs)},
              {"MONO", mask.count(esvs::Provenance::Mono)},
              {"BLEND", mask.count(esvs::Provenance::Blend)},
              {"INVALID", mask.count(esvs::Provenance::Invalid)}}}});
    };
  });

  // warp
  auto* warp = app.add_subcommand("warp", "Forward-warp a feature map into another camera");
  std::string wp_src, wp_dst, wp_feat, wp_depth, wp_cov;
  warp->add_option("src-cam", wp_src, "Source camera file")->required();
  warp->add_option("dst-cam", wp_dst, "Destination camera file")->required();
  warp->add_option("features", wp_feat, "Source feature map")->required();
  warp->add_option("depth", wp_depth, "Source depth map")->required();
  warp->add_option("--coverage", wp_cov, "Write the destination depth of each splat here");
  warp->callback([&] {
    run = [&] {
      const auto res = esvs::forward_warp(esvs::read_camera_file(wp_src), esvs::read_camera_file(wp_dst),
                                          esvs::read_feature_map(wp_feat), esvs::read_depth_map(wp_depth));
      esvs::write_map(require_out("warp"), res.features);
      if (!wp_cov.empty()) esvs::write_map(wp_cov, res.coverage);
      emit({{"width", res.features.width()},
            {"height", res.features.height()},
            {"channels", res.features.channels()},
            {"covered", res.coverage.valid_count()}});
    };
  });

  // eval-pose
  auto* eval_pose = app.add_subcommand("eval-pose", "Angular error after gauge alignment");
  std::string ep_est, ep_ref;
  eval_pose->add_option("est", ep_est, "Estimated graph")->required();
  eval_pose->add_option("ref", ep_ref, "Reference graph")->required();
  eval_pose->callback([&] {
    run = [&] { emit(esvs::to_json(esvs::aligned_pose_errors(read_graph(ep_est), read_graph(ep_ref)))); };
  });

  // eval-depth
  auto* eval_depth = app.add_subcommand("eval-depth", "Depth error over jointly valid pixels");
  std::string ed_pred, ed_truth;
  eval_depth->add_option("pred", ed_pred, "Predicted depth map")->required();
  eval_depth->add_option("truth", ed_truth, "Ground-truth depth map")->required();
  eval_depth->callback([&] {
    run = [&] {
      emit(esvs::to_json(esvs::depth_error_stats(esvs::read_depth_map(ed_pred), esvs::read_depth_map(ed_truth))));
    };
  });

  // run-fig4
  auto* fig4 = app.add_subcommand("run-fig4", "Pose-recovery experiment over many seeds");
  int f4_seeds = 20;
  bool f4_no_mpnn = false;
  std::string f4_csv;
  auto* f4_seeds_opt = fig4->add_option("--seeds", f4_seeds, "Number of seeds")->capture_default_str();
  fig4->add_flag("--no-mpnn", f4_no_mpnn, "Skip the learned refiner");
  fig4->add_option("--csv", f4_csv, "Write per-seed errors as CSV here");
  fig4->callback([&] {
    run = [&] {
      auto kv = load_config();
      auto cfg = esvs::PoseExperimentConfig::from(kv);
      kv.require_consumed();
      override_with(f4_seeds_opt, f4_seeds, cfg.seeds);
      if (f4_no_mpnn) cfg.run_mpnn = false;
      cfg.seed = G.seed;
      const auto res = esvs::run_fig4_experiment(cfg);
      if (!G.out.empty()) esvs::binio::write_file(G.out, res.report.dump(2) + "\n");
      if (!f4_csv.empty()) esvs::binio::write_file(f4_csv, res.csv);
      emit(res.report["summary"]);
    };
  });

  // run-fig6
  auto* fig6 = app.add_subcommand("run-fig6", "Depth-fusion experiment over many seeds");
  int f6_seeds = 20;
  double f6_tau = 0.05, f6_sigma = 0.66;
  std::string f6_csv, f6_sweep;
  auto* f6_seeds_opt = fig6->add_option("--seeds", f6_seeds, "Number of seeds")->capture_default_str();
  auto* f6_tau_opt = fig6->add_option("--tau", f6_tau, "Monocular confidence threshold")->capture_default_str();
  auto* f6_sigma_opt = fig6->add_option("--sigma", f6_sigma, "Far boundary as a fraction of median depth")->capture_default_str();
  fig6->add_option("--csv", f6_csv, "Write per-seed errors as CSV here");
  fig6->add_option("--sweep", f6_sweep, "Also run the sigma sweep and write its CSV here");
  fig6->callback([&] {
    run = [&] {
      auto kv = load_config();
      auto cfg = esvs::DepthExperimentConfig::from(kv);
      kv.require_consumed();
      override_with(f6_seeds_opt, f6_seeds, cfg.seeds);
      override_with(f6_tau_opt, f6_tau, cfg.fusion.tau);
      override_with(f6_sigma_opt, f6_sigma, cfg.fusion.sigma);
      cfg.seed = G.seed;
      const auto res = esvs::run_fig6_experiment(cfg);
      if (!G.out.empty()) esvs::binio::write_file(G.out, res.report.dump(2) + "\n");
      if (!f6_csv.empty()) esvs::binio::write_file(f6_csv, res.csv);
      if (!f6_sweep.empty()) {
        esvs::binio::write_file(f6_sweep, esvs::run_sigma_sweep(cfg, esvs::default_sigma_grid()));
      }
      emit(res.report["summary"]);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "ERROR(UsageError): %s\n", e.what());
    return 1;
  }

  try {
    run();
  } catch (const esvs::Error& e) {
    std::fprintf(stderr, "ERROR(%s): %s\n", e.kind().c_str(), e.what());
    return e.error_class() == esvs::ErrorClass::Input ? 2 : 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "ERROR(FormatError): %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "ERROR(InternalError): %s\n", e.what());
    return 3;
  }
  return 0;
}
