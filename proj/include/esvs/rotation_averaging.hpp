#pragma once

// Robust multiple rotation averaging: minimize Σ ρ(γ(rel_ij, R_j R_i⁻¹))
// over absolutes with ρ a smoothed ℓ1 norm, plus the evaluation helpers
// used to score pose estimates (gauge alignment, error statistics, L_mra).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/SVD>

#include "esvs/error.hpp"
#include "esvs/so3.hpp"
#include "esvs/viewgraph.hpp"

namespace esvs {

struct AveragingConfig {
  int max_iters = 100;
  double step_tolerance = 1e-9;  // radians
  double irls_epsilon = 1e-3;    // radians
  double beta = 0.1;             // anchor weight used when reporting L_mra
  double damping = 1.0;          // initial step fraction of each vertex update

  void validate() const {
    if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
    if (!(irls_epsilon > 0.0)) throw ConfigError("irls_epsilon must be > 0");
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (!(damping > 0.0)) throw ConfigError("damping must be > 0");
    if (!(step_tolerance >= 0.0)) throw ConfigError("step_tolerance must be >= 0");
  }
};

struct AveragingReport {
  int iterations_run = 0;
  double final_objective = 0.0;
  std::vector<double> per_iteration_objective;  // entry 0 is the start point
  bool converged = false;
};

/// Huber-smoothed ℓ1: r²/(2ε) below ε, r − ε/2 above. Its IRLS weight is
/// 1/max(ε, r).
inline double smoothed_l1(double r, double eps) {
  return r <= eps ? 0.5 * r * r / eps : r - 0.5 * eps;
}

/// Σ over non-outlier edges of weight · ρ(γ(rel, R_j R_i⁻¹)).
inline double averaging_objective(const ViewGraph& g, double irls_epsilon) {
  double sum = 0.0;
  for (const auto& e : g.edges()) {
    if (e.outlier) continue;
    sum += e.weight * smoothed_l1(edge_residual(g, e), irls_epsilon);
  }
  return sum;
}

namespace detail {

/// Rotation of vertex `k` implied by one incident edge and the neighbor's
/// current absolute.
inline Rotation implied_absolute(const Edge& e, const Incidence& inc,
                                 const std::vector<Rotation>& abs) {
  const Rotation& rn = abs[inc.neighbor];
  // outgoing (k -> n): rel ≈ R_n R_k⁻¹  =>  R_k ≈ rel⁻¹ R_n
  return inc.outgoing ? compose(inverse(e.rel), rn) : compose(e.rel, rn);
}

inline double local_objective(const ViewGraph& g, const std::vector<Incidence>& links,
                              const std::vector<Rotation>& abs, const Rotation& rk,
                              double eps) {
  double sum = 0.0;
  for (const auto& inc : links) {
    const Edge& e = g.edges()[inc.edge];
    sum += e.weight * smoothed_l1(geodesic_distance(implied_absolute(e, inc, abs), rk), eps);
  }
  return sum;
}

}  // namespace detail

/// IRLS with Gauss-Seidel vertex sweeps in ascending id order. Each vertex
/// moves toward the IRLS-weighted tangent mean of its neighbor-implied
/// rotations; a step that would raise the local objective is halved up to
/// eight times and otherwise skipped. No vertex is held fixed, so the gauge
/// is inherited from the initialization.
inline std::pair<ViewGraph, AveragingReport> robust_average(const ViewGraph& g,
                                                            const AveragingConfig& cfg) {
  cfg.validate();
  if (g.empty()) throw EmptyGraphError("robust_average: graph has no vertices");
  if (!g.fully_initialized()) {
    throw NotInitializedError("robust_average: every vertex needs an absolute rotation");
  }

  const auto adj = g.adjacency();
  std::vector<Rotation> abs;
  abs.reserve(g.vertex_count());
  for (const auto& v : g.vertices()) abs.push_back(*v.absolute);

  std::vector<std::size_t> sweep(g.vertex_count());
  std::iota(sweep.begin(), sweep.end(), std::size_t{0});
  std::sort(sweep.begin(), sweep.end(), [&](std::size_t a, std::size_t b) {
    return g.vertices()[a].id < g.vertices()[b].id;
  });

  auto objective = [&] {
    double sum = 0.0;
    for (const auto& e : g.edges()) {
      if (e.outlier) continue;
      const Rotation implied = compose(abs[g.index_of(e.j)], inverse(abs[g.index_of(e.i)]));
      sum += e.weight * smoothed_l1(geodesic_distance(e.rel, implied), cfg.irls_epsilon);
    }
    return sum;
  };

  AveragingReport report;
  report.per_iteration_objective.push_back(objective());

  constexpr int kMaxHalvings = 8;
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    double max_update = 0.0;
    for (std::size_t k : sweep) {
      const auto& links = adj[k];
      if (links.empty()) continue;

      Vec3 num = Vec3::Zero();
      double den = 0.0;
      for (const auto& inc : links) {
        const Edge& e = g.edges()[inc.edge];
        const Rotation target = detail::implied_absolute(e, inc, abs);
        const Vec3 delta = detail::log_map_unchecked(compose(target, inverse(abs[k])));
        const double w = e.weight / std::max(cfg.irls_epsilon, delta.norm());
        num += w * delta;
        den += w;
      }
      if (!(den > 0.0)) continue;
      const Vec3 step = num / den;
      if (step.norm() == 0.0) continue;

      const double before =
          detail::local_objective(g, links, abs, abs[k], cfg.irls_epsilon);
      double scale = cfg.damping;
      for (int h = 0; h <= kMaxHalvings; ++h, scale *= 0.5) {
        const Rotation cand = compose(exp_map(scale * step), abs[k]);
        const double after =
            detail::local_objective(g, links, abs, cand, cfg.irls_epsilon);
        if (after <= before) {
          abs[k] = cand;
          max_update = std::max(max_update, scale * step.norm());
          break;
        }
      }
    }
    report.per_iteration_objective.push_back(objective());
    report.iterations_run = iter + 1;
    if (max_update < cfg.step_tolerance) {
      report.converged = true;
      break;
    }
  }
  report.final_objective = report.per_iteration_objective.back();

  ViewGraph out = g;
  for (std::size_t k = 0; k < abs.size(); ++k) {
    out.set_absolute(g.vertices()[k].id, abs[k]);
  }
  return {std::move(out), report};
}

namespace detail {

inline void require_same_vertices(const ViewGraph& a, const ViewGraph& b) {
  if (a.vertex_count() != b.vertex_count()) {
    throw MismatchedGraphError("graphs have different vertex counts");
  }
  for (const auto& v : a.vertices()) {
    if (!b.has_vertex(v.id)) {
      throw MismatchedGraphError("vertex " + std::to_string(v.id) +
                                 " missing from the other graph");
    }
  }
}

}  // namespace detail

/// L_mra = Σ_edges d_Q(R̂_j R̂_i⁻¹, rel_ij) + β Σ_vertices d_Q(R̂_i, R̃_i),
/// with the edge set taken from `estimate` (outlier-flagged edges skipped)
/// and R̃ from `init`.
inline double l_mra(const ViewGraph& estimate, const ViewGraph& init, double beta) {
  detail::require_same_vertices(estimate, init);
  double sum = 0.0;
  for (const auto& e : estimate.edges()) {
    if (e.outlier) continue;
    sum += quat_distance(implied_relative(estimate, e), e.rel);
  }
  if (beta != 0.0) {
    double reg = 0.0;
    for (const auto& v : estimate.vertices()) {
      reg += quat_distance(estimate.absolute(v.id), init.absolute(v.id));
    }
    sum += beta * reg;
  }
  return sum;
}

/// Rotation G minimizing Σ ‖R̂_i G − R_i‖²_F (chordal least squares).
inline Rotation gauge_rotation(const ViewGraph& estimated, const ViewGraph& reference) {
  detail::require_same_vertices(estimated, reference);
  Mat3 m = Mat3::Zero();
  for (const auto& v : estimated.vertices()) {
    m += estimated.absolute(v.id).matrix().transpose() *
         reference.absolute(v.id).matrix();
  }
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return Rotation::from_matrix(svd.matrixU() * d * svd.matrixV().transpose());
}

/// Right-multiplies every absolute of `estimated` by gauge_rotation().
inline ViewGraph gauge_align(const ViewGraph& estimated, const ViewGraph& reference) {
  const Rotation gauge = gauge_rotation(estimated, reference);
  ViewGraph out = estimated;
  for (const auto& v : estimated.vertices()) {
    out.set_absolute(v.id, compose(*v.absolute, gauge));
  }
  return out;
}

struct PoseErrorStats {
  double mean_deg = 0.0;
  double median_deg = 0.0;
  double max_deg = 0.0;
};

/// Per-vertex angles between the two graphs' absolutes, in degrees. No
/// gauge alignment is applied here.
inline std::vector<double> pose_errors_deg(const ViewGraph& a, const ViewGraph& b) {
  detail::require_same_vertices(a, b);
  std::vector<double> out;
  out.reserve(a.vertex_count());
  for (const auto& v : a.vertices()) {
    out.push_back(rad2deg(geodesic_distance(a.absolute(v.id), b.absolute(v.id))));
  }
  return out;
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline PoseErrorStats pose_error_stats(const ViewGraph& a, const ViewGraph& b) {
  const auto errs = pose_errors_deg(a, b);
  PoseErrorStats s;
  if (errs.empty()) return s;
  s.mean_deg = std::accumulate(errs.begin(), errs.end(), 0.0) / errs.size();
  s.median_deg = median_of(errs);
  s.max_deg = *std::max_element(errs.begin(), errs.end());
  return s;
}

}  // namespace esvs
