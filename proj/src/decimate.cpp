// Garland-Heckbert quadric edge collapse.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <map>
#include <queue>
#include <set>

#include "cyclemap/error.hpp"
#include "cyclemap/mesh.hpp"

namespace cyclemap {
namespace {

using Quadric = Eigen::Matrix4d;

Quadric plane_quadric(const Eigen::Vector3d& normal, const Eigen::Vector3d& point, double weight) {
  Eigen::Vector4d p;
  p << normal, -normal.dot(point);
  return weight * (p * p.transpose());
}

struct Candidate {
  double cost;
  int u, v;
  unsigned stamp_u, stamp_v;
  Eigen::Vector3d target;
  bool operator>(const Candidate& o) const {
    if (cost != o.cost) return cost > o.cost;
    if (u != o.u) return u > o.u;
    return v > o.v;
  }
};

class Collapser {
 public:
  Collapser(const TriMesh& mesh, const DecimationOptions& opt) : opt_(opt) {
    const auto n = mesh.n_vertices();
    pos_.resize(n);
    for (std::size_t i = 0; i < n; ++i) pos_[i] = mesh.vertex(i);
    faces_.resize(mesh.n_faces());
    face_alive_.assign(mesh.n_faces(), true);
    vertex_faces_.resize(n);
    for (std::size_t t = 0; t < mesh.n_faces(); ++t) {
      for (int k = 0; k < 3; ++k) {
        faces_[t][k] = mesh.faces()(static_cast<Eigen::Index>(t), k);
        vertex_faces_[faces_[t][k]].insert(static_cast<int>(t));
      }
    }
    alive_.assign(n, true);
    stamp_.assign(n, 0);
    parent_.assign(n, -1);
    int n_comp = 0;
    comp_ = component_labels(mesh, &n_comp);
    comp_size_.assign(static_cast<std::size_t>(n_comp), 0);
    for (int c : comp_) ++comp_size_[static_cast<std::size_t>(c)];
    alive_count_ = n;

    quadric_.assign(n, Quadric::Zero());
    for (std::size_t t = 0; t < faces_.size(); ++t) {
      const auto& f = faces_[t];
      const Eigen::Vector3d nrm = (pos_[f[1]] - pos_[f[0]]).cross(pos_[f[2]] - pos_[f[0]]);
      const double area2 = nrm.norm();
      const Quadric q = plane_quadric(nrm / area2, pos_[f[0]], 0.5 * area2);
      for (int k = 0; k < 3; ++k) quadric_[f[k]] += q;
    }
    // Boundary edges get a perpendicular constraint plane.
    std::map<std::pair<int, int>, std::vector<int>> edge_faces;
    for (std::size_t t = 0; t < faces_.size(); ++t)
      for (int k = 0; k < 3; ++k) edge_faces[std::minmax(faces_[t][k], faces_[t][(k + 1) % 3])].push_back(static_cast<int>(t));
    boundary_vertex_.assign(n, false);
    for (const auto& [e, fs] : edge_faces) {
      if (fs.size() != 1) continue;
      boundary_vertex_[e.first] = boundary_vertex_[e.second] = true;
      const auto& f = faces_[fs[0]];
      const Eigen::Vector3d fn = (pos_[f[1]] - pos_[f[0]]).cross(pos_[f[2]] - pos_[f[0]]).normalized();
      const Eigen::Vector3d ed = pos_[e.second] - pos_[e.first];
      const Eigen::Vector3d pn = ed.cross(fn);
      if (pn.norm() == 0.0) continue;
      const Quadric q = plane_quadric(pn.normalized(), pos_[e.first], opt_.boundary_penalty * ed.squaredNorm());
      quadric_[e.first] += q;
      quadric_[e.second] += q;
    }
    for (const auto& [e, fs] : edge_faces) push(e.first, e.second);
  }

  void run(std::size_t target) {
    while (alive_count_ > target) {
      if (heap_.empty())
        throw DataError("decimation stalled at " + std::to_string(alive_count_) + " vertices (target " +
                        std::to_string(target) + "): further collapses would destroy a connected component or "
                        "break manifoldness");
      Candidate c = heap_.top();
      heap_.pop();
      if (!alive_[c.u] || !alive_[c.v] || stamp_[c.u] != c.stamp_u || stamp_[c.v] != c.stamp_v) continue;
      if (!collapse(c)) continue;
    }
  }

  DecimationResult result() const {
    const std::size_t n = pos_.size();
    std::vector<int> new_index(n, -1);
    std::vector<int> origin;
    for (std::size_t i = 0; i < n; ++i)
      if (alive_[i]) {
        new_index[i] = static_cast<int>(origin.size());
        origin.push_back(static_cast<int>(i));
      }
    Vertices V(static_cast<Eigen::Index>(origin.size()), 3);
    for (std::size_t i = 0; i < origin.size(); ++i)
      V.row(static_cast<Eigen::Index>(i)) = pos_[static_cast<std::size_t>(origin[i])].transpose();
    std::vector<std::array<int, 3>> tris;
    for (std::size_t t = 0; t < faces_.size(); ++t)
      if (face_alive_[t]) tris.push_back({new_index[faces_[t][0]], new_index[faces_[t][1]], new_index[faces_[t][2]]});
    Faces F(static_cast<Eigen::Index>(tris.size()), 3);
    for (std::size_t t = 0; t < tris.size(); ++t) F.row(static_cast<Eigen::Index>(t)) << tris[t][0], tris[t][1], tris[t][2];
    std::vector<int> vmap(n);
    for (std::size_t i = 0; i < n; ++i) {
      int r = static_cast<int>(i);
      while (parent_[r] >= 0) r = parent_[r];
      vmap[i] = new_index[r];
    }
    return {TriMesh(std::move(V), std::move(F)), std::move(vmap), std::move(origin)};
  }

 private:
  std::set<int> neighbors(int v) const {
    std::set<int> out;
    for (int t : vertex_faces_[v])
      for (int k = 0; k < 3; ++k)
        if (faces_[t][k] != v) out.insert(faces_[t][k]);
    return out;
  }

  void push(int a, int b) {
    if (a > b) std::swap(a, b);
    const Quadric q = quadric_[a] + quadric_[b];
    Eigen::Matrix3d A = q.topLeftCorner<3, 3>();
    Eigen::Vector3d rhs = -q.topRightCorner<3, 1>();
    auto cost_at = [&](const Eigen::Vector3d& p) {
      Eigen::Vector4d h;
      h << p, 1.0;
      return std::max(0.0, h.dot(q * h));
    };
    Eigen::Vector3d best = 0.5 * (pos_[a] + pos_[b]);
    double best_cost = cost_at(best);
    for (const Eigen::Vector3d& p : {pos_[a], pos_[b]}) {
      const double c = cost_at(p);
      if (c < best_cost) best_cost = c, best = p;
    }
    const double scale = A.cwiseAbs().maxCoeff();
    if (scale > 0.0 && std::abs(A.determinant()) > 1e-10 * scale * scale * scale) {
      const Eigen::Vector3d p = A.ldlt().solve(rhs);
      // Keep the optimum near the edge; far-off solutions come from
      // near-planar neighborhoods.
      const double len = (pos_[a] - pos_[b]).norm();
      if (p.allFinite() && (p - 0.5 * (pos_[a] + pos_[b])).norm() < 2.0 * len) {
        const double c = cost_at(p);
        if (c <= best_cost) best_cost = c, best = p;
      }
    }
    heap_.push({best_cost, a, b, stamp_[a], stamp_[b], best});
  }

  bool collapse(const Candidate& c) {
    const int u = c.u, v = c.v;
    if (comp_size_[static_cast<std::size_t>(comp_[u])] <= 4) return false;

    std::vector<int> shared;
    for (int t : vertex_faces_[u])
      if (vertex_faces_[v].count(t)) shared.push_back(t);
    if (shared.empty() || shared.size() > 2) return false;
    const bool boundary_edge = shared.size() == 1;
    if (!boundary_edge && boundary_vertex_[u] && boundary_vertex_[v]) return false;

    // Link condition: common neighbors are exactly the opposite vertices.
    std::set<int> opposite;
    for (int t : shared)
      for (int k = 0; k < 3; ++k)
        if (faces_[t][k] != u && faces_[t][k] != v) opposite.insert(faces_[t][k]);
    const auto nu = neighbors(u), nv = neighbors(v);
    std::vector<int> common;
    std::set_intersection(nu.begin(), nu.end(), nv.begin(), nv.end(), std::back_inserter(common));
    if (common.size() != opposite.size()) return false;

    // Reject normal flips and slivers in the surviving fan.
    for (int w : {u, v})
      for (int t : vertex_faces_[w]) {
        if (std::find(shared.begin(), shared.end(), t) != shared.end()) continue;
        std::array<Eigen::Vector3d, 3> p;
        for (int k = 0; k < 3; ++k) p[k] = pos_[faces_[t][k]];
        const Eigen::Vector3d before = (p[1] - p[0]).cross(p[2] - p[0]);
        for (int k = 0; k < 3; ++k)
          if (faces_[t][k] == w) p[k] = c.target;
        const Eigen::Vector3d after = (p[1] - p[0]).cross(p[2] - p[0]);
        if (after.norm() < 1e-12 * std::max(1.0, before.norm())) return false;
        if (before.normalized().dot(after.normalized()) < 0.2) return false;
      }

    for (int t : shared) {
      face_alive_[t] = false;
      for (int k = 0; k < 3; ++k) vertex_faces_[faces_[t][k]].erase(t);
    }
    for (int t : vertex_faces_[v]) {
      for (int k = 0; k < 3; ++k)
        if (faces_[t][k] == v) faces_[t][k] = u;
      vertex_faces_[u].insert(t);
    }
    vertex_faces_[v].clear();
    alive_[v] = false;
    parent_[v] = u;
    pos_[u] = c.target;
    quadric_[u] += quadric_[v];
    boundary_vertex_[u] = boundary_vertex_[u] || boundary_vertex_[v];
    --comp_size_[static_cast<std::size_t>(comp_[u])];
    --alive_count_;
    ++stamp_[u];
    ++stamp_[v];
    for (int w : neighbors(u)) {
      ++stamp_[w];
    }
    // Every edge touching a re-stamped vertex needs a fresh candidate.
    std::set<std::pair<int, int>> edges;
    for (int w : neighbors(u))
      for (int t : vertex_faces_[w])
        for (int k = 0; k < 3; ++k) edges.insert(std::minmax(faces_[t][k], faces_[t][(k + 1) % 3]));
    for (const auto& e : edges) push(e.first, e.second);
    return true;
  }

  DecimationOptions opt_;
  std::vector<Eigen::Vector3d> pos_;
  std::vector<std::array<int, 3>> faces_;
  std::vector<bool> face_alive_;
  std::vector<std::set<int>> vertex_faces_;
  std::vector<bool> alive_;
  std::vector<bool> boundary_vertex_;
  std::vector<unsigned> stamp_;
  std::vector<int> parent_;
  std::vector<int> comp_;
  std::vector<std::size_t> comp_size_;
  std::vector<Quadric> quadric_;
  std::size_t alive_count_ = 0;
  std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> heap_;
};

}  // namespace

DecimationResult decimate(const TriMesh& mesh, std::size_t target_n, const DecimationOptions& options) {
  if (target_n < 4) throw UsageError("decimation target must be at least 4 vertices");
  if (target_n > mesh.n_vertices())
    throw UsageError("decimation target " + std::to_string(target_n) + " exceeds vertex count " +
                     std::to_string(mesh.n_vertices()));
  if (target_n == mesh.n_vertices()) {
    std::vector<int> id(mesh.n_vertices());
    for (std::size_t i = 0; i < id.size(); ++i) id[i] = static_cast<int>(i);
    return {mesh, id, id};
  }
  Collapser c(mesh, options);
  c.run(target_n);
  return c.result();
}

}  // namespace cyclemap
