#pragma once

// Message-passing refiner for an initialized view graph.
//
// Node state starts as the initial quaternion padded with zeros to H. Each
// of T rounds computes, for every vertex k,
//
//   s_k = mean_i relu(W_m [h_k; h_i; r_ik] + b_m)
//   h_k = relu(W_u [h_k; s_k] + b_u)
//
// where r_ik = R̃_k⁻¹ ∘ R̃_ik ∘ R̃_i is the edge discrepancy. The readout
// o_k = W_r h_k + b_r + (1,0,0,0) is normalized into a correction δ_k and
// the refined rotation is δ_k ∘ R̃_k. Training minimizes L_mra with Adam,
// using the hand-written reverse pass in loss_and_gradients().

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "esvs/binary_io.hpp"
#include "esvs/error.hpp"
#include "esvs/rng.hpp"
#include "esvs/rotation_averaging.hpp"
#include "esvs/so3.hpp"
#include "esvs/viewgraph.hpp"

namespace esvs {

struct MpnnParams {
  int hidden = 8;
  int steps = 2;
  Eigen::MatrixXd msg_w;  // H x (2H+4)
  Eigen::VectorXd msg_b;  // H
  Eigen::MatrixXd upd_w;  // H x 2H
  Eigen::VectorXd upd_b;  // H
  Eigen::MatrixXd out_w;  // 4 x H
  Eigen::VectorXd out_b;  // 4

  static MpnnParams zeros(int hidden, int steps) {
    if (hidden < 4 || steps < 0) {
      throw DimensionMismatchError("MPNN needs hidden >= 4 and steps >= 0");
    }
    MpnnParams p;
    p.hidden = hidden;
    p.steps = steps;
    p.msg_w = Eigen::MatrixXd::Zero(hidden, 2 * hidden + 4);
    p.msg_b = Eigen::VectorXd::Zero(hidden);
    p.upd_w = Eigen::MatrixXd::Zero(hidden, 2 * hidden);
    p.upd_b = Eigen::VectorXd::Zero(hidden);
    p.out_w = Eigen::MatrixXd::Zero(4, hidden);
    p.out_b = Eigen::VectorXd::Zero(4);
    return p;
  }

  /// Every tensor uniform in ±1/√fan_in, drawn in declaration order.
  static MpnnParams random(int hidden, int steps, Rng& rng) {
    MpnnParams p = zeros(hidden, steps);
    const double fan[] = {2.0 * hidden + 4, 2.0 * hidden + 4, 2.0 * hidden, 2.0 * hidden,
                          double(hidden), double(hidden)};
    int k = 0;
    p.for_each_tensor([&](const char*, double* data, Eigen::Index n) {
      const double b = 1.0 / std::sqrt(fan[k++]);
      for (Eigen::Index i = 0; i < n; ++i) data[i] = rng.uniform(-b, b);
    });
    return p;
  }

  void validate() const {
    const Eigen::Index h = hidden;
    if (hidden < 4 || steps < 0 || msg_w.rows() != h || msg_w.cols() != 2 * h + 4 ||
        msg_b.size() != h || upd_w.rows() != h || upd_w.cols() != 2 * h || upd_b.size() != h ||
        out_w.rows() != 4 || out_w.cols() != h || out_b.size() != 4) {
      throw DimensionMismatchError("MPNN parameter shapes do not match hidden size");
    }
  }

  template <typename F>
  void for_each_tensor(F&& f) {
    f("msg_w", msg_w.data(), msg_w.size());
    f("msg_b", msg_b.data(), msg_b.size());
    f("upd_w", upd_w.data(), upd_w.size());
    f("upd_b", upd_b.data(), upd_b.size());
    f("out_w", out_w.data(), out_w.size());
    f("out_b", out_b.data(), out_b.size());
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<MpnnParams*>(this)->for_each_tensor(
        [&](const char* name, double* data, Eigen::Index n) {
          f(name, static_cast<const double*>(data), n);
        });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const char*, const double*, Eigen::Index k) { n += k; });
    return n;
  }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int iterations = 500;
  double beta_reg = 0.1;
  std::uint64_t seed = 42;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("learning_rate must be >= 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be > 0");
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (!(beta_reg >= 0.0)) throw ConfigError("beta_reg must be >= 0");
  }
};

/// R̃_j⁻¹ ∘ R̃_ij ∘ R̃_i for edge (i -> j).
inline Rotation edge_feature(const ViewGraph& init, const Edge& e) {
  return compose(inverse(init.absolute(e.j)), compose(e.rel, init.absolute(e.i)));
}

namespace detail {

inline double relu(double z) { return z > 0.0 ? z : 0.0; }
inline double relu_grad(double z) { return z > 0.0 ? 1.0 : 0.0; }

struct MpnnMessage {
  std::size_t from;  // vertex index i (sender)
  Vec4 edge;         // r_ik as a 4-vector
};

struct MpnnStep {
  std::vector<Eigen::VectorXd> h_in;
  std::vector<std::vector<Eigen::VectorXd>> msg_pre;  // per vertex, per message
  std::vector<Eigen::VectorXd> s;
  std::vector<Eigen::VectorXd> upd_pre;
};

struct MpnnTape {
  std::vector<Vec4> init;                        // q̃_k
  std::vector<std::vector<MpnnMessage>> inbox;   // per vertex
  std::vector<MpnnStep> steps;
  std::vector<Eigen::VectorXd> h_final;
  std::vector<Vec4> o;                           // readout before normalization
  std::vector<Vec4> delta;
  std::vector<Vec4> p;                           // δ_k ⊗ q̃_k
};

inline Eigen::VectorXd message_input(const Eigen::VectorXd& hk, const Eigen::VectorXd& hi,
                                     const Vec4& r) {
  Eigen::VectorXd x(hk.size() * 2 + 4);
  x << hk, hi, r;
  return x;
}

inline MpnnTape mpnn_forward(const ViewGraph& g, const MpnnParams& p) {
  p.validate();
  if (g.empty()) throw EmptyGraphError("MPNN needs at least one vertex");
  const std::size_t n = g.vertex_count();
  const int H = p.hidden;
  MpnnTape t;
  t.init.resize(n);
  for (std::size_t k = 0; k < n; ++k) t.init[k] = g.absolute(g.vertices()[k].id).coeffs();

  const auto adj = g.adjacency();
  t.inbox.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    for (const auto& inc : adj[k]) {
      const Edge& e = g.edges()[inc.edge];
      const Rotation r = edge_feature(g, e);  // oriented i -> j
      // Message into k comes from the neighbor, so orient neighbor -> k.
      const Rotation rik = inc.outgoing ? inverse(r) : r;
      t.inbox[k].push_back({inc.neighbor, rik.coeffs()});
    }
  }

  std::vector<Eigen::VectorXd> h(n, Eigen::VectorXd::Zero(H));
  for (std::size_t k = 0; k < n; ++k) h[k].head<4>() = t.init[k];

  for (int step = 0; step < p.steps; ++step) {
    MpnnStep st;
    st.h_in = h;
    st.msg_pre.resize(n);
    st.s.assign(n, Eigen::VectorXd::Zero(H));
    st.upd_pre.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      std::vector<Eigen::VectorXd> msgs;
      for (const auto& m : t.inbox[k]) {
        Eigen::VectorXd z = p.msg_w * message_input(h[k], h[m.from], m.edge) + p.msg_b;
        msgs.push_back(z.unaryExpr(&relu));
        st.msg_pre[k].push_back(std::move(z));
      }
      // Summation order fixed by value so relabeling cannot change rounding.
      std::sort(msgs.begin(), msgs.end(), [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
        return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(),
                                            b.data() + b.size());
      });
      for (const auto& m : msgs) st.s[k] += m;
      if (!msgs.empty()) st.s[k] /= static_cast<double>(msgs.size());
    }
    for (std::size_t k = 0; k < n; ++k) {
      Eigen::VectorXd u(2 * H);
      u << h[k], st.s[k];
      st.upd_pre[k] = p.upd_w * u + p.upd_b;
    }
    for (std::size_t k = 0; k < n; ++k) h[k] = st.upd_pre[k].unaryExpr(&relu);
    t.steps.push_back(std::move(st));
  }

  t.h_final = h;
  t.o.resize(n);
  t.delta.resize(n);
  t.p.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    Vec4 o = p.out_w * h[k] + p.out_b;
    o[0] += 1.0;
    const double norm = o.norm();
    if (!std::isfinite(norm) || norm < 1e-12) {
      throw DivergenceError("MPNN readout collapsed to a zero or non-finite quaternion");
    }
    t.o[k] = o;
    t.delta[k] = o / norm;
    t.p[k] = quat_mul(t.delta[k], t.init[k]);
  }
  return t;
}

/// d_Q(a, b) and its gradient with respect to a (zero at a == ±b).
inline double quat_distance_grad(const Vec4& a, const Vec4& b, Vec4& grad) {
  const Vec4 dm = a - b, dp = a + b;
  const double nm = dm.norm(), np = dp.norm();
  if (nm <= np) {
    grad = nm > 0.0 ? Vec4(dm / nm) : Vec4::Zero();
    return nm;
  }
  grad = np > 0.0 ? Vec4(dp / np) : Vec4::Zero();
  return np;
}

}  // namespace detail

/// Refined graph: every absolute replaced by δ_k ∘ R̃_k.
inline ViewGraph forward(const ViewGraph& g, const MpnnParams& p) {
  const auto t = detail::mpnn_forward(g, p);
  ViewGraph out = g;
  for (std::size_t k = 0; k < g.vertex_count(); ++k) {
    out.set_absolute(g.vertices()[k].id, Rotation(t.p[k]));
  }
  return out;
}

struct MpnnLoss {
  double loss = 0.0;
  MpnnParams grad;
};

/// l_mra(forward(g, p), init, beta) with gradients for every parameter.
inline MpnnLoss loss_and_gradients(const ViewGraph& g, const ViewGraph& init,
                                   const MpnnParams& p, double beta) {
  detail::require_same_vertices(g, init);
  const auto t = detail::mpnn_forward(g, p);
  const std::size_t n = g.vertex_count();
  const int H = p.hidden;

  MpnnLoss out;
  out.grad = MpnnParams::zeros(p.hidden, p.steps);
  MpnnParams& gr = out.grad;

  std::vector<Vec4> gp(n, Vec4::Zero());
  for (const auto& e : g.edges()) {
    if (e.outlier) continue;
    const std::size_t i = g.index_of(e.i), j = g.index_of(e.j);
    const Vec4 ci = quat_conj(t.p[i]);
    const Vec4 implied = quat_mul(t.p[j], ci);
    Vec4 ge;
    out.loss += detail::quat_distance_grad(implied, e.rel.coeffs(), ge);
    gp[j] += quat_right_matrix(ci).transpose() * ge;
    gp[i] += quat_conj(quat_left_matrix(t.p[j]).transpose() * ge);
  }
  if (beta != 0.0) {
    double reg = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      Vec4 gk;
      reg += detail::quat_distance_grad(t.p[k], init.absolute(g.vertices()[k].id).coeffs(), gk);
      gp[k] += beta * gk;
    }
    out.loss += beta * reg;
  }

  std::vector<Eigen::VectorXd> gh(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec4 gd = quat_right_matrix(t.init[k]).transpose() * gp[k];
    const Vec4 go = (gd - t.delta[k] * t.delta[k].dot(gd)) / t.o[k].norm();
    gr.out_w += go * t.h_final[k].transpose();
    gr.out_b += go;
    gh[k] = p.out_w.transpose() * go;
  }

  for (int step = p.steps - 1; step >= 0; --step) {
    const auto& st = t.steps[step];
    std::vector<Eigen::VectorXd> gprev(n, Eigen::VectorXd::Zero(H));
    std::vector<Eigen::VectorXd> gs(n);
    for (std::size_t k = 0; k < n; ++k) {
      const Eigen::VectorXd gy =
          gh[k].cwiseProduct(st.upd_pre[k].unaryExpr(&detail::relu_grad));
      Eigen::VectorXd u(2 * H);
      u << st.h_in[k], st.s[k];
      gr.upd_w += gy * u.transpose();
      gr.upd_b += gy;
      const Eigen::VectorXd gu = p.upd_w.transpose() * gy;
      gprev[k] += gu.head(H);
      gs[k] = gu.tail(H);
    }
    for (std::size_t k = 0; k < n; ++k) {
      const auto& inbox = t.inbox[k];
      if (inbox.empty()) continue;
      const Eigen::VectorXd gm = gs[k] / static_cast<double>(inbox.size());
      for (std::size_t a = 0; a < inbox.size(); ++a) {
        const auto& m = inbox[a];
        const Eigen::VectorXd gz =
            gm.cwiseProduct(st.msg_pre[k][a].unaryExpr(&detail::relu_grad));
        gr.msg_w += gz * detail::message_input(st.h_in[k], st.h_in[m.from], m.edge).transpose();
        gr.msg_b += gz;
        const Eigen::VectorXd gx = p.msg_w.transpose() * gz;
        gprev[k] += gx.head(H);
        gprev[m.from] += gx.segment(H, H);
      }
    }
    gh = std::move(gprev);
  }
  return out;
}

struct TrainResult {
  MpnnParams params;
  std::vector<double> loss_trace;  // iterations + 1 entries, last is the final loss
};

/// Adam on L_mra starting from `start`.
inline TrainResult train(const ViewGraph& g, const ViewGraph& init, MpnnParams start,
                         const TrainConfig& cfg) {
  cfg.validate();
  start.validate();
  TrainResult res{std::move(start), {}};
  const std::size_t np = res.params.parameter_count();
  std::vector<double> m(np, 0.0), v(np, 0.0);
  double b1t = 1.0, b2t = 1.0;

  for (int it = 0; it <= cfg.iterations; ++it) {
    MpnnLoss lg = loss_and_gradients(g, init, res.params, cfg.beta_reg);
    if (!std::isfinite(lg.loss)) {
      throw DivergenceError("training loss became non-finite at iteration " + std::to_string(it));
    }
    res.loss_trace.push_back(lg.loss);
    if (it == cfg.iterations) break;

    std::vector<double> grad;
    grad.reserve(np);
    lg.grad.for_each_tensor([&](const char*, const double* d, Eigen::Index n) {
      grad.insert(grad.end(), d, d + n);
    });
    b1t *= cfg.beta1;
    b2t *= cfg.beta2;
    std::size_t k = 0;
    res.params.for_each_tensor([&](const char*, double* d, Eigen::Index n) {
      for (Eigen::Index a = 0; a < n; ++a, ++k) {
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad[k];
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
        const double mh = m[k] / (1.0 - b1t), vh = v[k] / (1.0 - b2t);
        d[a] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.adam_epsilon);
      }
    });
  }
  return res;
}

/// Seeds the parameters from cfg.seed, then trains.
inline TrainResult train(const ViewGraph& g, const ViewGraph& init, int hidden, int steps,
                         const TrainConfig& cfg) {
  Rng rng(cfg.seed);
  return train(g, init, MpnnParams::random(hidden, steps, rng), cfg);
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string encode_mpnn(const MpnnParams& p) {
  p.validate();
  std::string out = "MPNN";
  binio::put_u32(out, static_cast<std::uint32_t>(p.hidden));
  binio::put_u32(out, static_cast<std::uint32_t>(p.steps));
  p.for_each_tensor([&](const char*, const double* d, Eigen::Index n) {
    for (Eigen::Index k = 0; k < n; ++k) binio::put_f64(out, d[k]);
  });
  return out;
}

inline MpnnParams decode_mpnn(const std::string& bytes) {
  binio::Reader r(bytes, "MPNN");
  r.expect_magic("MPNN");
  const std::uint32_t h = r.u32(), t = r.u32();
  if (h < 4 || h > 4096 || t > 4096) throw FormatError("MPNN: unreasonable hidden/steps");
  MpnnParams p = MpnnParams::zeros(static_cast<int>(h), static_cast<int>(t));
  if (r.remaining() != p.parameter_count() * 8) {
    throw FormatError("MPNN: payload size does not match dimensions");
  }
  p.for_each_tensor([&](const char*, double* d, Eigen::Index n) {
    for (Eigen::Index k = 0; k < n; ++k) {
      d[k] = r.f64();
      if (!std::isfinite(d[k])) throw FormatError("MPNN: non-finite parameter");
    }
  });
  return p;
}

inline std::string loss_trace_csv(const std::vector<double>& trace) {
  std::ostringstream os;
  os << "iter,loss\n";
  for (std::size_t k = 0; k < trace.size(); ++k) os << k << "," << format_double(trace[k]) << "\n";
  return os.str();
}

}  // namespace esvs
