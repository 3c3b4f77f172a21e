#pragma once

// Pose view-graph: vertices carry optional absolute rotations, directed
// edges carry observed relative rotations. Edge (i -> j) estimates
// R_j ∘ R_i⁻¹ throughout the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "esvs/error.hpp"
#include "esvs/so3.hpp"

namespace esvs {

struct Vertex {
  int id = 0;
  std::optional<Rotation> absolute;
};

struct Edge {
  int i = 0;
  int j = 0;
  Rotation rel;
  double weight = 1.0;
  bool outlier = false;
};

/// One entry of a vertex's adjacency list.
struct Incidence {
  std::size_t neighbor;  // vertex index
  std::size_t edge;      // edge index
  bool outgoing;         // true when the edge is stored as (this -> neighbor)
};

class ViewGraph {
 public:
  void add_vertex(int id, std::optional<Rotation> absolute = std::nullopt) {
    if (id < 0) throw FormatError("vertex id must be nonnegative");
    if (index_.count(id)) {
      throw FormatError("duplicate vertex " + std::to_string(id));
    }
    index_.emplace(id, vertices_.size());
    vertices_.push_back({id, absolute});
  }

  void add_edge(const Edge& e) {
    if (e.i == e.j) {
      throw FormatError("self-edge on vertex " + std::to_string(e.i));
    }
    for (int id : {e.i, e.j}) {
      if (!index_.count(id)) {
        throw DanglingVertexError("edge (" + std::to_string(e.i) + "," +
                                  std::to_string(e.j) +
                                  ") references missing vertex " +
                                  std::to_string(id));
      }
    }
    if (!(e.weight >= 0.0) || !std::isfinite(e.weight)) {
      throw FormatError("edge weight must be finite and nonnegative");
    }
    const auto key = unordered_key(e.i, e.j);
    if (edge_index_.count(key)) {
      throw DuplicateEdgeError("duplicate edge between " +
                               std::to_string(key.first) + " and " +
                               std::to_string(key.second));
    }
    edge_index_.emplace(key, edges_.size());
    edges_.push_back(e);
  }

  const std::vector<Vertex>& vertices() const { return vertices_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t vertex_count() const { return vertices_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  bool empty() const { return vertices_.empty(); }

  bool has_vertex(int id) const { return index_.count(id) != 0; }

  std::size_t index_of(int id) const {
    auto it = index_.find(id);
    if (it == index_.end()) {
      throw MismatchedGraphError("no vertex " + std::to_string(id));
    }
    return it->second;
  }

  const Vertex& vertex(int id) const { return vertices_[index_of(id)]; }

  void set_absolute(int id, std::optional<Rotation> r) {
    vertices_[index_of(id)].absolute = r;
  }

  /// Absolute rotation of `id`; throws NotInitializedError when unset.
  const Rotation& absolute(int id) const {
    const auto& v = vertex(id);
    if (!v.absolute) {
      throw NotInitializedError("vertex " + std::to_string(id) +
                                " has no absolute rotation");
    }
    return *v.absolute;
  }

  bool fully_initialized() const {
    return std::all_of(vertices_.begin(), vertices_.end(),
                       [](const Vertex& v) { return v.absolute.has_value(); });
  }

  void set_outlier(std::size_t edge, bool flag) { edges_.at(edge).outlier = flag; }

  std::optional<std::size_t> find_edge(int a, int b) const {
    auto it = edge_index_.find(unordered_key(a, b));
    if (it == edge_index_.end()) return std::nullopt;
    return it->second;
  }

  /// Adjacency lists indexed by vertex position; neighbors sorted by vertex
  /// index. Outlier-flagged edges are skipped unless requested.
  std::vector<std::vector<Incidence>> adjacency(bool include_outliers = false) const {
    std::vector<std::vector<Incidence>> adj(vertices_.size());
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      const Edge& ed = edges_[e];
      if (ed.outlier && !include_outliers) continue;
      const std::size_t a = index_.at(ed.i), b = index_.at(ed.j);
      adj[a].push_back({b, e, true});
      adj[b].push_back({a, e, false});
    }
    for (auto& list : adj) {
      std::sort(list.begin(), list.end(),
                [](const Incidence& x, const Incidence& y) {
                  return x.neighbor < y.neighbor;
                });
    }
    return adj;
  }

 private:
  static std::pair<int, int> unordered_key(int a, int b) {
    return {std::min(a, b), std::max(a, b)};
  }

  std::vector<Vertex> vertices_;
  std::vector<Edge> edges_;
  std::unordered_map<int, std::size_t> index_;
  std::map<std::pair<int, int>, std::size_t> edge_index_;
};

/// Relative rotation of `e` read in the direction from vertex `from`
/// (which must be one of its endpoints) to the other endpoint.
inline Rotation directed_relative(const Edge& e, int from) {
  return e.i == from ? e.rel : inverse(e.rel);
}

/// R_j ∘ R_i⁻¹ for edge (i -> j) evaluated on the graph's absolutes.
inline Rotation implied_relative(const ViewGraph& g, const Edge& e) {
  return compose(g.absolute(e.j), inverse(g.absolute(e.i)));
}

/// γ(rel_ij, R_j R_i⁻¹).
inline double edge_residual(const ViewGraph& g, const Edge& e) {
  return geodesic_distance(e.rel, implied_relative(g, e));
}

// ---------------------------------------------------------------------------
// Text format
//
//   VERTEX <id> <qw> <qx> <qy> <qz>        all-zero quaternion = uninitialized
//   EDGE <i> <j> <qw> <qx> <qy> <qz> <weight> [OUTLIER]
//   # comment

namespace detail {

inline bool parse_finite(const std::string& tok, double& out) {
  std::istringstream in(tok);
  in >> out;
  return in && in.eof() && std::isfinite(out);
}

inline bool parse_id(const std::string& tok, int& out) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos) {
    return false;
  }
  try {
    const long v = std::stol(tok);
    if (v > std::numeric_limits<int>::max()) return false;
    out = static_cast<int>(v);
  } catch (...) {
    return false;
  }
  return true;
}

}  // namespace detail

inline ViewGraph parse_pose_graph(std::istream& in) {
  struct PendingEdge {
    std::size_t line;
    Edge edge;
  };
  ViewGraph g;
  std::vector<PendingEdge> pending;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const auto first = raw.find_first_not_of(" \t");
    if (first == std::string::npos || raw[first] == '#') continue;

    std::istringstream ls(raw);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);

    auto quat = [&](std::size_t at, double q[4]) {
      for (int k = 0; k < 4; ++k) {
        if (!detail::parse_finite(tok[at + k], q[k])) {
          throw ParseError(lineno, "bad number '" + tok[at + k] + "'");
        }
      }
    };

    if (tok[0] == "VERTEX") {
      if (tok.size() != 6) throw ParseError(lineno, "VERTEX expects 5 fields");
      int id;
      if (!detail::parse_id(tok[1], id)) {
        throw ParseError(lineno, "bad vertex id '" + tok[1] + "'");
      }
      double q[4];
      quat(2, q);
      std::optional<Rotation> abs;
      if (q[0] != 0.0 || q[1] != 0.0 || q[2] != 0.0 || q[3] != 0.0) {
        abs = Rotation(q[0], q[1], q[2], q[3]);
      }
      if (g.has_vertex(id)) {
        throw ParseError(lineno, "duplicate vertex " + std::to_string(id));
      }
      g.add_vertex(id, abs);
    } else if (tok[0] == "EDGE") {
      if (tok.size() != 8 && !(tok.size() == 9 && tok[8] == "OUTLIER")) {
        throw ParseError(lineno, "EDGE expects 7 fields and an optional OUTLIER flag");
      }
      Edge e;
      if (!detail::parse_id(tok[1], e.i) || !detail::parse_id(tok[2], e.j)) {
        throw ParseError(lineno, "bad edge endpoint");
      }
      if (e.i == e.j) throw ParseError(lineno, "self-edge");
      double q[4];
      quat(3, q);
      if (q[0] == 0.0 && q[1] == 0.0 && q[2] == 0.0 && q[3] == 0.0) {
        throw ParseError(lineno, "edge rotation must be nonzero");
      }
      e.rel = Rotation(q[0], q[1], q[2], q[3]);
      if (!detail::parse_finite(tok[7], e.weight) || e.weight < 0.0) {
        throw ParseError(lineno, "bad edge weight '" + tok[7] + "'");
      }
      e.outlier = tok.size() == 9;
      pending.push_back({lineno, e});
    } else {
      throw ParseError(lineno, "unknown record '" + tok[0] + "'");
    }
  }
  for (const auto& p : pending) {
    for (int id : {p.edge.i, p.edge.j}) {
      if (!g.has_vertex(id)) {
        throw DanglingVertexError("line " + std::to_string(p.line) +
                                  ": edge references missing vertex " +
                                  std::to_string(id));
      }
    }
    if (g.find_edge(p.edge.i, p.edge.j)) {
      throw DuplicateEdgeError("line " + std::to_string(p.line) +
                               ": duplicate edge between " +
                               std::to_string(p.edge.i) + " and " +
                               std::to_string(p.edge.j));
    }
    g.add_edge(p.edge);
  }
  return g;
}

inline ViewGraph parse_pose_graph(const std::string& text) {
  std::istringstream in(text);
  return parse_pose_graph(in);
}

inline std::string serialize_pose_graph(const ViewGraph& g) {
  std::string out;
  for (const auto& v : g.vertices()) {
    out += "VERTEX " + std::to_string(v.id) + " ";
    out += v.absolute ? to_string(*v.absolute) : std::string("0 0 0 0");
    out += "\n";
  }
  for (const auto& e : g.edges()) {
    out += "EDGE " + std::to_string(e.i) + " " + std::to_string(e.j) + " " +
           to_string(e.rel) + " " + format_double(e.weight);
    if (e.outlier) out += " OUTLIER";
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spanning tree

struct TreeLink {
  int parent = 0;
  std::size_t edge = 0;
  bool forward = true;  // edge stored as (parent -> child)
};

struct SpanningTree {
  int root = 0;
  std::map<int, TreeLink> parent;
  std::vector<int> order;  // breadth-first from root, root first

  std::vector<std::size_t> edge_indices() const {
    std::vector<std::size_t> out;
    for (const auto& [child, link] : parent) out.push_back(link.edge);
    std::sort(out.begin(), out.end());
    return out;
  }
};

namespace detail {

struct DisjointSets {
  explicit DisjointSets(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (b < a) std::swap(a, b);
    parent[b] = a;
    return true;
  }
  std::vector<std::size_t> parent;
};

inline double tree_cost(double weight) {
  return weight > 0.0 ? 1.0 / weight : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Connected components over non-outlier edges, each sorted by id, ordered
/// by smallest member.
inline std::vector<std::vector<int>> connected_components(const ViewGraph& g) {
  detail::DisjointSets ds(g.vertex_count());
  for (const auto& e : g.edges()) {
    if (!e.outlier) ds.unite(g.index_of(e.i), g.index_of(e.j));
  }
  std::map<std::size_t, std::vector<int>> groups;
  for (std::size_t k = 0; k < g.vertex_count(); ++k) {
    groups[ds.find(k)].push_back(g.vertices()[k].id);
  }
  std::vector<std::vector<int>> out;
  for (auto& [root, ids] : groups) {
    std::sort(ids.begin(), ids.end());
    out.push_back(std::move(ids));
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// Kruskal over non-outlier edges with cost 1/weight; ties broken by the
/// stored (i, j) pair. Rooted at the smallest vertex id.
inline SpanningTree min_spanning_tree(const ViewGraph& g) {
  if (g.empty()) throw EmptyGraphError("min_spanning_tree: graph has no vertices");

  std::vector<std::size_t> order;
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    if (!g.edges()[e].outlier) order.push_back(e);
  }
  const auto& edges = g.edges();
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ca = detail::tree_cost(edges[a].weight);
    const double cb = detail::tree_cost(edges[b].weight);
    if (ca != cb) return ca < cb;
    return std::pair(edges[a].i, edges[a].j) < std::pair(edges[b].i, edges[b].j);
  });

  detail::DisjointSets ds(g.vertex_count());
  std::vector<std::vector<std::size_t>> tree_adj(g.vertex_count());
  std::size_t used = 0;
  for (std::size_t e : order) {
    const std::size_t a = g.index_of(edges[e].i), b = g.index_of(edges[e].j);
    if (ds.unite(a, b)) {
      tree_adj[a].push_back(e);
      tree_adj[b].push_back(e);
      ++used;
    }
  }
  if (used + 1 != g.vertex_count()) {
    throw DisconnectedGraphError(connected_components(g));
  }

  SpanningTree t;
  t.root = g.vertices().front().id;
  for (const auto& v : g.vertices()) t.root = std::min(t.root, v.id);

  std::queue<int> frontier;
  frontier.push(t.root);
  std::vector<bool> seen(g.vertex_count(), false);
  seen[g.index_of(t.root)] = true;
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    t.order.push_back(u);
    std::vector<std::pair<int, std::size_t>> next;
    for (std::size_t e : tree_adj[g.index_of(u)]) {
      const int other = edges[e].i == u ? edges[e].j : edges[e].i;
      if (!seen[g.index_of(other)]) next.emplace_back(other, e);
    }
    std::sort(next.begin(), next.end());
    for (auto [child, e] : next) {
      seen[g.index_of(child)] = true;
      t.parent[child] = {u, e, edges[e].i == u};
      frontier.push(child);
    }
  }
  return t;
}

/// Root gets identity; every other vertex composes the tree-edge relative
/// onto its parent. Returns a copy of `g` with all absolutes set.
inline ViewGraph init_absolute_rotations(const ViewGraph& g, const SpanningTree& t) {
  if (t.order.size() != g.vertex_count()) {
    std::vector<int> in_tree(t.order), rest;
    std::sort(in_tree.begin(), in_tree.end());
    for (const auto& v : g.vertices()) {
      if (!std::binary_search(in_tree.begin(), in_tree.end(), v.id)) rest.push_back(v.id);
    }
    std::sort(rest.begin(), rest.end());
    throw DisconnectedGraphError({in_tree, rest});
  }
  ViewGraph out = g;
  out.set_absolute(t.root, Rotation::identity());
  for (int v : t.order) {
    if (v == t.root) continue;
    const TreeLink& link = t.parent.at(v);
    const Edge& e = g.edges()[link.edge];
    const Rotation& rp = out.absolute(link.parent);
    out.set_absolute(v, link.forward ? compose(e.rel, rp)
                                     : compose(inverse(e.rel), rp));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cycle consistency

/// Angle of the loop rotation around a triangle u -> v -> w -> u.
inline double triangle_cycle_error(const Rotation& uv, const Rotation& vw,
                                   const Rotation& wu) {
  return angle_of(compose(wu, compose(vw, uv)));
}

/// Per-edge median of the cycle errors of every triangle containing the
/// edge. Edges in no triangle get nullopt. All edges take part, flagged or
/// not, so the scores depend on the relatives alone. With `suspect`, a
/// triangle counts toward an edge only when its two other edges are not
/// suspect.
inline std::vector<std::optional<double>> edge_cycle_scores(
    const ViewGraph& g, const std::vector<bool>* suspect = nullptr) {
  const auto adj = g.adjacency(/*include_outliers=*/true);
  const auto& edges = g.edges();
  const auto& verts = g.vertices();
  std::vector<std::vector<double>> errs(edges.size());

  auto find_in = [&](std::size_t a, std::size_t b) -> const Incidence* {
    const auto& list = adj[a];
    auto it = std::lower_bound(list.begin(), list.end(), b,
                               [](const Incidence& x, std::size_t key) {
                                 return x.neighbor < key;
                               });
    return (it != list.end() && it->neighbor == b) ? &*it : nullptr;
  };

  for (std::size_t u = 0; u < adj.size(); ++u) {
    for (const Incidence& uv : adj[u]) {
      const std::size_t v = uv.neighbor;
      if (v <= u) continue;
      for (const Incidence& uw : adj[u]) {
        const std::size_t w = uw.neighbor;
        if (w <= v) continue;
        const Incidence* vw = find_in(v, w);
        if (!vw) continue;
        const Rotation r_uv = directed_relative(edges[uv.edge], verts[u].id);
        const Rotation r_vw = directed_relative(edges[vw->edge], verts[v].id);
        const Rotation r_wu = directed_relative(edges[uw.edge], verts[w].id);
        const double err = triangle_cycle_error(r_uv, r_vw, r_wu);
        const std::size_t tri[3] = {uv.edge, vw->edge, uw.edge};
        for (int a = 0; a < 3; ++a) {
          if (suspect && ((*suspect)[tri[(a + 1) % 3]] || (*suspect)[tri[(a + 2) % 3]])) continue;
          errs[tri[a]].push_back(err);
        }
      }
    }
  }

  std::vector<std::optional<double>> scores(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    auto& v = errs[e];
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    scores[e] = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
  return scores;
}

/// Flags edges whose cycle score exceeds `threshold` (radians), in two
/// passes. The first scores over all triangles. The second rescores over
/// triangles whose other edges passed the first, which clears clean edges
/// that merely share triangles with outliers; an edge left with no such
/// triangle keeps its first-pass verdict. Existing flags are kept; edges in
/// no triangle are never flagged.
inline ViewGraph cycle_consistency_filter(const ViewGraph& g, double threshold) {
  ViewGraph out = g;
  const auto first = edge_cycle_scores(g);
  std::vector<bool> suspect(first.size(), false);
  for (std::size_t e = 0; e < first.size(); ++e) suspect[e] = first[e] && *first[e] > threshold;
  const auto second = edge_cycle_scores(g, &suspect);
  for (std::size_t e = 0; e < first.size(); ++e) {
    const bool flag = second[e] ? *second[e] > threshold : suspect[e];
    if (flag) out.set_outlier(e, true);
  }
  return out;
}

}  // namespace esvs
