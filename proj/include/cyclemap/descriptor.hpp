#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <vector>

#include "cyclemap/mesh.hpp"

namespace cyclemap {

/// Area-weighted average of incident face normals, normalized.
Eigen::MatrixXd vertex_normals(const TriMesh& mesh);

struct ShotResult {
  Eigen::MatrixXd values;  // n x width
  /// Vertices whose support held fewer than five neighbours; their rows are zero.
  std::size_t n_sparse = 0;
};

/// SHOT over a Euclidean ball of the given radius: 32 spatial sectors
/// (8 azimuth x 2 elevation x 2 radial) times `bins` normal-cosine bins,
/// quadrilinear soft binning, unit L2 norm. Columns past 32*bins are zero
/// padding; width 0 means no padding.
ShotResult shot(const TriMesh& mesh, double radius, int bins, Eigen::Index width = 0);

struct DescriptorStack {
  std::vector<Eigen::MatrixXd> slices;  // one n x s matrix per scale
  std::vector<double> scales;
  double radius_fraction = 0.0;
  double radius = 0.0;  // absolute support radius shared by every scale
  int bins = 0;
  std::size_t n_sparse = 0;

  Eigen::Index n() const { return slices.empty() ? 0 : slices.front().rows(); }
  Eigen::Index m() const { return static_cast<Eigen::Index>(slices.size()); }
  Eigen::Index s() const { return slices.empty() ? 0 : slices.front().cols(); }
};

struct MultiscaleOptions {
  int m = 5;
  double lo = 0.2;
  double hi = 2.0;
  double radius_fraction = 0.05;
  int bins = 10;
  Eigen::Index width = 352;
};

/// m factors spaced geometrically over [lo, hi].
std::vector<double> geometric_scales(int m, double lo, double hi);

/// SHOT of the mesh uniformly scaled by each factor, all with the same
/// absolute radius: radius_fraction times the geodesic diameter of the
/// unscaled mesh.
DescriptorStack multiscale_shot(const TriMesh& mesh, const MultiscaleOptions& options = {});

/// Same, with the radius already known.
DescriptorStack multiscale_shot(const TriMesh& mesh, const MultiscaleOptions& options, double radius);

}  // namespace cyclemap
