#include "cyclemap/geodesy.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>
#include <random>
#include <string>

#include "cyclemap/error.hpp"
#include "cyclemap/kernels.hpp"
#include "cyclemap/parallel.hpp"

namespace cyclemap {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

// Planar update of C from A and B with a point (virtual) source: S is placed
// on the far side of AB with |SA| = da, |SB| = db, and T(C) = |SC| when the
// segment SC passes through AB.
double triangle_update(double la, double lb, double l, double da, double db) {
  const double cx = (la * la - lb * lb + l * l) / (2.0 * l);
  const double cy2 = la * la - cx * cx;
  if (!(cy2 > 0.0)) return kInf;
  const double cy = std::sqrt(cy2);
  const double sx = (da * da - db * db + l * l) / (2.0 * l);
  const double sy2 = da * da - sx * sx;
  if (sy2 < 0.0) return kInf;
  const double sy = -std::sqrt(sy2);
  const double x_cross = sx + (cx - sx) * (-sy) / (cy - sy);
  if (x_cross < 0.0 || x_cross > l) return kInf;
  return std::hypot(cx - sx, cy - sy);
}

}  // namespace

PointMap PointMap::identity(std::size_t n) {
  PointMap m;
  m.assignments.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.assignments[i] = static_cast<int>(i);
  m.confidences.assign(n, 1.0);
  return m;
}

GeodesicSolver::GeodesicSolver(const TriMesh& mesh) : n_(mesh.n_vertices()) {
  const auto& V = mesh.vertices();
  const auto& F = mesh.faces();
  tris_.resize(n_);
  edges_.resize(n_);
  dependents_.resize(n_);

  std::map<std::pair<int, int>, std::vector<int>> edge_faces;
  for (Eigen::Index t = 0; t < F.rows(); ++t)
    for (int k = 0; k < 3; ++k)
      edge_faces[std::minmax(F(t, k), F(t, (k + 1) % 3))].push_back(static_cast<int>(t));
  for (const auto& [e, fs] : edge_faces) {
    const double len = (V.row(e.first) - V.row(e.second)).norm();
    edges_[e.first].push_back({e.second, len});
    edges_[e.second].push_back({e.first, len});
    dependents_[e.first].push_back(e.second);
    dependents_[e.second].push_back(e.first);
  }
  auto len3 = [&](int i, int j) { return (V.row(i) - V.row(j)).norm(); };

  for (Eigen::Index t = 0; t < F.rows(); ++t) {
    for (int k = 0; k < 3; ++k) {
      const int c = F(t, k), a = F(t, (k + 1) % 3), b = F(t, (k + 2) % 3);
      const double la = len3(c, a), lb = len3(c, b), l = len3(a, b);
      tris_[c].push_back({a, b, la, lb, l});
      const Eigen::Vector3d ca = V.row(a) - V.row(c), cb = V.row(b) - V.row(c);
      if (ca.dot(cb) >= 0.0) continue;
      ++n_obtuse_;

      // Unfold across AB (and onward) into the plane of (C, A, B) until a
      // vertex lands strictly inside the obtuse wedge at C.
      const double ax = 0.0;
      const Eigen::Vector2d A2(ax, 0.0), B2(l, 0.0);
      const double cx = (la * la - lb * lb + l * l) / (2.0 * l);
      const Eigen::Vector2d C2(cx, std::sqrt(std::max(0.0, la * la - cx * cx)));
      const Eigen::Vector2d vA = A2 - C2, vB = B2 - C2;
      const double orient = cross2(vA, vB);

      int p = a, q = b, face = static_cast<int>(t);
      Eigen::Vector2d P2 = A2, Q2 = B2, prev2 = C2;
      bool found = false;
      for (int depth = 0; depth < 10 && !found; ++depth) {
        const auto it = edge_faces.find(std::minmax(p, q));
        int next_face = -1;
        for (int f : it->second)
          if (f != face) {
            next_face = f;
            break;
          }
        if (next_face < 0) break;
        int d = -1;
        for (int kk = 0; kk < 3; ++kk) {
          const int v = F(next_face, kk);
          if (v != p && v != q) d = v;
        }
        const double lpq = (Q2 - P2).norm();
        const double lpd = len3(p, d), lqd = len3(q, d);
        const Eigen::Vector2d u = (Q2 - P2) / lpq;
        Eigen::Vector2d w(-u.y(), u.x());
        if (w.dot(prev2 - P2) > 0.0) w = -w;
        const double x = (lpd * lpd - lqd * lqd + lpq * lpq) / (2.0 * lpq);
        const double y = std::sqrt(std::max(0.0, lpd * lpd - x * x));
        const Eigen::Vector2d D2 = P2 + x * u + y * w;
        const Eigen::Vector2d vD = D2 - C2;
        const double sa = cross2(vA, vD) * orient, sb = cross2(vD, vB) * orient;
        if (sa > 0.0 && sb > 0.0) {
          if (d == c) break;
          const double lcd = vD.norm();
          tris_[c].push_back({a, d, la, lcd, (D2 - A2).norm()});
          tris_[c].push_back({d, b, lcd, lb, (B2 - D2).norm()});
          dependents_[d].push_back(c);
          found = true;
        } else if (sa <= 0.0) {
          prev2 = P2;
          p = d;
          P2 = D2;
        } else {
          prev2 = Q2;
          q = d;
          Q2 = D2;
        }
        face = next_face;
      }
      if (!found) ++n_failed_unfold_;
    }
  }
  for (auto& deps : dependents_) {
    std::sort(deps.begin(), deps.end());
    deps.erase(std::unique(deps.begin(), deps.end()), deps.end());
  }
  use_dijkstra_ = F.rows() > 0 && static_cast<double>(n_obtuse_) > 0.2 * static_cast<double>(F.rows()) &&
                  n_failed_unfold_ > 0;
}

std::vector<double> GeodesicSolver::dijkstra(int source) const {
  if (source < 0 || static_cast<std::size_t>(source) >= n_) throw UsageError("source vertex out of range");
  std::vector<double> d(n_, kInf);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  d[static_cast<std::size_t>(source)] = 0.0;
  heap.push({0.0, source});
  while (!heap.empty()) {
    const auto [du, u] = heap.top();
    heap.pop();
    if (du > d[static_cast<std::size_t>(u)]) continue;
    for (const auto& e : edges_[static_cast<std::size_t>(u)]) {
      const double nd = du + e.length;
      if (nd < d[static_cast<std::size_t>(e.to)]) {
        d[static_cast<std::size_t>(e.to)] = nd;
        heap.push({nd, e.to});
      }
    }
  }
  return d;
}

std::vector<double> GeodesicSolver::distances(int source) const {
  if (use_dijkstra_) return dijkstra(source);
  if (source < 0 || static_cast<std::size_t>(source) >= n_) throw UsageError("source vertex out of range");
  std::vector<double> d(n_, kInf);
  std::vector<char> accepted(n_, 0);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  d[static_cast<std::size_t>(source)] = 0.0;
  heap.push({0.0, source});

  auto evaluate = [&](std::size_t c) {
    double best = d[c];
    for (const auto& e : edges_[c])
      if (accepted[static_cast<std::size_t>(e.to)]) best = std::min(best, d[static_cast<std::size_t>(e.to)] + e.length);
    for (const auto& t : tris_[c]) {
      const auto a = static_cast<std::size_t>(t.a), b = static_cast<std::size_t>(t.b);
      if (accepted[a] && accepted[b]) best = std::min(best, triangle_update(t.la, t.lb, t.l, d[a], d[b]));
    }
    return best;
  };

  while (!heap.empty()) {
    const auto [du, u] = heap.top();
    heap.pop();
    const auto uu = static_cast<std::size_t>(u);
    if (accepted[uu] || du > d[uu]) continue;
    accepted[uu] = 1;
    for (int c : dependents_[uu]) {
      const auto cc = static_cast<std::size_t>(c);
      if (accepted[cc]) continue;
      const double nd = evaluate(cc);
      if (nd < d[cc]) {
        d[cc] = nd;
        heap.push({nd, c});
      }
    }
  }
  return d;
}

std::vector<double> fast_marching(const TriMesh& mesh, int source) { return GeodesicSolver(mesh).distances(source); }

std::vector<double> dijkstra(const TriMesh& mesh, int source) { return GeodesicSolver(mesh).dijkstra(source); }

double DistanceMatrix::diameter() const {
  double m = 0.0;
  for (Eigen::Index j = 0; j < values.cols(); ++j)
    for (Eigen::Index i = 0; i < values.rows(); ++i)
      if (std::isfinite(values(i, j))) m = std::max(m, values(i, j));
  return m;
}

int DistanceMatrix::index_of(int vertex) const {
  // Dense matrices cover every vertex in order.
  if (static_cast<std::size_t>(vertex) < sample_indices.size() && sample_indices[static_cast<std::size_t>(vertex)] == vertex)
    return vertex;
  const auto it = std::find(sample_indices.begin(), sample_indices.end(), vertex);
  return it == sample_indices.end() ? -1 : static_cast<int>(it - sample_indices.begin());
}

DistanceMatrix DistanceMatrix::restricted(const std::vector<int>& positions) const {
  DistanceMatrix out;
  const auto p = static_cast<Eigen::Index>(positions.size());
  out.values.resize(p, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < p; ++i) out.values(i, j) = values(positions[static_cast<std::size_t>(i)], positions[static_cast<std::size_t>(j)]);
  for (int pos : positions) out.sample_indices.push_back(sample_indices[static_cast<std::size_t>(pos)]);
  out.has_unreachable = !out.values.allFinite();
  out.dijkstra_fallback = dijkstra_fallback;
  return out;
}

DistanceMatrix distance_matrix(const GeodesicSolver& solver, const std::optional<std::vector<int>>& sample) {
  std::vector<int> s;
  if (sample) {
    s = *sample;
    for (int v : s)
      if (v < 0 || static_cast<std::size_t>(v) >= solver.n_vertices())
        throw UsageError("sample index " + std::to_string(v) + " out of range");
  } else {
    s.resize(solver.n_vertices());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<int>(i);
  }
  const auto p = static_cast<Eigen::Index>(s.size());
  Eigen::MatrixXd D(p, p);
  parallel_for(s.size(), [&](std::size_t a) {
    const auto row = solver.distances(s[a]);
    for (Eigen::Index b = 0; b < p; ++b) D(static_cast<Eigen::Index>(a), b) = row[static_cast<std::size_t>(s[static_cast<std::size_t>(b)])];
  });
  DistanceMatrix out;
  out.values = 0.5 * (D + D.transpose());
  out.values.diagonal().setZero();
  out.sample_indices = std::move(s);
  out.has_unreachable = !out.values.allFinite();
  out.dijkstra_fallback = solver.uses_dijkstra();
  return out;
}

DistanceMatrix distance_matrix(const TriMesh& mesh, const std::optional<std::vector<int>>& sample) {
  return distance_matrix(GeodesicSolver(mesh), sample);
}

std::vector<int> fps_sample(const TriMesh& mesh, std::size_t p, std::uint64_t seed) {
  const std::size_t n = mesh.n_vertices();
  if (p < 1 || p > n) throw UsageError("fps_sample needs 1 <= p <= n (p=" + std::to_string(p) + ", n=" + std::to_string(n) + ")");
  GeodesicSolver solver(mesh);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(n) - 1);
  std::vector<int> out{pick(rng)};
  std::vector<double> mind = solver.distances(out[0]);
  std::vector<char> chosen(n, 0);
  chosen[static_cast<std::size_t>(out[0])] = 1;
  const auto& k = kernels::active();
  while (out.size() < p) {
    // Already-chosen vertices sit at distance 0, so argmax skips them unless
    // every remaining vertex coincides with the sample.
    std::size_t next = k.argmax(mind.data(), n);
    if (chosen[next]) {
      next = 0;
      while (chosen[next]) ++next;
    }
    chosen[next] = 1;
    out.push_back(static_cast<int>(next));
    const auto d = solver.distances(static_cast<int>(next));
    k.min_update(mind.data(), d.data(), n);
  }
  return out;
}

double geodesic_diameter(const TriMesh& mesh, std::size_t p, std::uint64_t seed) {
  p = std::min(p, mesh.n_vertices());
  const auto sample = fps_sample(mesh, p, seed);
  return distance_matrix(mesh, sample).diameter();
}

GeodesicErrors geodesic_error(const PointMap& map, const PointMap& gt, const DistanceMatrix& d_target, double area_target) {
  if (map.size() != gt.size())
    throw DataError("map has " + std::to_string(map.size()) + " entries, ground truth " + std::to_string(gt.size()));
  if (!(area_target > 0.0)) throw DataError("target area must be positive");
  const double norm = 1.0 / std::sqrt(area_target);
  GeodesicErrors e;
  e.per_point.resize(map.size());
  for (std::size_t x = 0; x < map.size(); ++x) {
    const int a = d_target.index_of(map.assignments[x]);
    const int b = d_target.index_of(gt.assignments[x]);
    if (a < 0 || b < 0)
      throw DataError("vertex " + std::to_string(a < 0 ? map.assignments[x] : gt.assignments[x]) +
                      " not covered by the target distance matrix");
    e.per_point[x] = d_target.values(a, b) * norm;
    e.sum += e.per_point[x];
  }
  e.mean = map.size() ? e.sum / static_cast<double>(map.size()) : 0.0;
  return e;
}

std::vector<double> cumulative_curve(const std::vector<double>& errors, const std::vector<double>& thresholds) {
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] < thresholds[i - 1]) throw UsageError("thresholds must be ascending");
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out;
  out.reserve(thresholds.size());
  for (double t : thresholds) {
    const auto cnt = std::upper_bound(sorted.begin(), sorted.end(), t) - sorted.begin();
    out.push_back(sorted.empty() ? 1.0 : static_cast<double>(cnt) / static_cast<double>(sorted.size()));
  }
  return out;
}

}  // namespace cyclemap
