#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cyclemap/mesh.hpp"

namespace cyclemap {

/// Base surface for synthetic pairs. A plain icosphere is symmetric, so
/// correspondence on it is undetermined; a few Gaussian bumps at random
/// directions break every symmetry.
struct SynthBase {
  enum class Kind { Icosphere, Grid } kind = Kind::Icosphere;
  int subdivisions = 3;  // icosphere: 642 vertices
  int grid_size = 24;    // grid: (size+1)^2 vertices on [-1, 1]^2
  int bumps = 6;
  double bump_height_lo = 0.12, bump_height_hi = 0.3;
  double bump_width_lo = 0.25, bump_width_hi = 0.45;  // radians on the sphere
  std::uint64_t seed = 1;
};

TriMesh make_synth_base(const SynthBase& base);

/// Bend about the y axis with total angle `angle` spread over the whole
/// x extent (Barr's bend with the centreline at z = z_centre). On a flat
/// grid in the z = 0 plane this rolls the sheet onto a cylinder, which is an
/// exact isometry; on closed surfaces it is only near-isometric, with strain
/// proportional to angle times distance from the centreline over the extent.
TriMesh bend(const TriMesh& mesh, double angle);

/// Local radial stretch of a sphere-like surface about its centroid:
/// r -> r (1 + amount * w), w a raised cosine of the angle from `direction`
/// that falls to zero at `cap_angle`.
TriMesh local_stretch(const TriMesh& mesh, const Eigen::Vector3d& direction, double amount, double cap_angle);

/// Geodesic distortion of a vertex-aligned pair: mean over vertex pairs of
/// |d_b - d_a| / d_a, from `samples` FPS sources.
double isometric_distortion(const TriMesh& a, const TriMesh& b, std::size_t samples = 32);

}  // namespace cyclemap
