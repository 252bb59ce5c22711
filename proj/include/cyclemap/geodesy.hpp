#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

#include "cyclemap/mesh.hpp"

namespace cyclemap {

/// Geodesic distances between the sampled vertices. Entries for unreachable
/// pairs are +inf and flagged.
struct DistanceMatrix {
  Eigen::MatrixXd values;           // p x p, symmetric
  std::vector<int> sample_indices;  // vertex index of each row/column
  bool has_unreachable = false;
  bool dijkstra_fallback = false;

  Eigen::Index size() const { return values.rows(); }
  /// Largest finite entry.
  double diameter() const;
  /// Row/column of vertex v, or -1 when v is not sampled.
  int index_of(int vertex) const;
  /// Restriction to the given rows/columns (positions, not vertex ids).
  DistanceMatrix restricted(const std::vector<int>& positions) const;
};

/// A map X -> Y as target vertex indices with optional confidences.
struct PointMap {
  std::vector<int> assignments;
  std::vector<double> confidences;

  std::size_t size() const { return assignments.size(); }
  static PointMap identity(std::size_t n);
};

/// First-order fast marching with virtual-source triangle updates. Obtuse
/// corners are split by unfolding neighbouring faces until a vertex falls
/// inside the corner's wedge. The per-mesh preprocessing is shared across
/// sources.
class GeodesicSolver {
 public:
  explicit GeodesicSolver(const TriMesh& mesh);

  /// Distances from one source; unreachable vertices get +inf.
  std::vector<double> distances(int source) const;
  std::vector<double> dijkstra(int source) const;

  std::size_t n_vertices() const { return n_; }
  std::size_t n_obtuse_corners() const { return n_obtuse_; }
  std::size_t n_failed_unfoldings() const { return n_failed_unfold_; }
  /// True when the unfolding failed on too many obtuse triangles and
  /// distances() falls back to edge-graph Dijkstra.
  bool uses_dijkstra() const { return use_dijkstra_; }

 private:
  struct UpdateTriangle {
    int a, b;          // the two upwind vertices
    double la, lb, l;  // |CA|, |CB|, |AB| (possibly virtual)
  };
  struct Edge {
    int to;
    double length;
  };

  std::size_t n_ = 0;
  std::vector<std::vector<UpdateTriangle>> tris_;  // per target vertex C
  std::vector<std::vector<Edge>> edges_;           // mesh edges
  std::vector<std::vector<int>> dependents_;       // who to refresh when v is accepted
  std::size_t n_obtuse_ = 0;
  std::size_t n_failed_unfold_ = 0;
  bool use_dijkstra_ = false;
};

std::vector<double> fast_marching(const TriMesh& mesh, int source);
std::vector<double> dijkstra(const TriMesh& mesh, int source);

/// One sweep per sampled source, symmetrized as (D + D^T)/2. The default
/// sample is every vertex.
DistanceMatrix distance_matrix(const TriMesh& mesh, const std::optional<std::vector<int>>& sample = std::nullopt);
DistanceMatrix distance_matrix(const GeodesicSolver& solver, const std::optional<std::vector<int>>& sample = std::nullopt);

/// Farthest-point sampling under fast-marching distance; the first point is
/// drawn uniformly from the seed. Returned in selection order.
std::vector<int> fps_sample(const TriMesh& mesh, std::size_t p, std::uint64_t seed);

/// Max pairwise geodesic distance over a p-point FPS sample.
double geodesic_diameter(const TriMesh& mesh, std::size_t p = 32, std::uint64_t seed = 0);

struct GeodesicErrors {
  std::vector<double> per_point;  // D_Y(pi(x), pi*(x)) / sqrt(area_Y)
  double sum = 0.0;
  double mean = 0.0;
};

GeodesicErrors geodesic_error(const PointMap& map, const PointMap& ground_truth, const DistanceMatrix& d_target,
                              double area_target);

/// Fraction of errors <= t for each (non-decreasing) threshold.
std::vector<double> cumulative_curve(const std::vector<double>& errors, const std::vector<double>& thresholds);

}  // namespace cyclemap
