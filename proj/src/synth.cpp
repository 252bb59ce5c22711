#include "cyclemap/synth.hpp"

#include <cmath>
#include <algorithm>
#include <random>

#include "cyclemap/error.hpp"
#include "cyclemap/geodesy.hpp"

namespace cyclemap {
namespace {

// Uniform [0, 1) from the raw engine; the standard distributions are not
// portable across library implementations.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

Eigen::Vector3d random_direction(std::mt19937_64& rng) {
  const double z = uniform(rng, -1.0, 1.0);
  const double phi = uniform(rng, 0.0, 2.0 * M_PI);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

}  // namespace

TriMesh make_synth_base(const SynthBase& b) {
  std::mt19937_64 rng(b.seed);
  if (b.kind == SynthBase::Kind::Grid) {
    if (b.grid_size < 2) throw UsageError("synthetic grid needs at least 2 cells per side");
    const double h = 2.0 / b.grid_size;
    TriMesh g = make_grid(b.grid_size, b.grid_size, h);
    Vertices V = g.vertices();
    V.col(0).array() -= 1.0;
    V.col(1).array() -= 1.0;
    // Height bumps keep the grid a graph over the plane.
    for (int i = 0; i < b.bumps; ++i) {
      const double cx = uniform(rng, -0.8, 0.8), cy = uniform(rng, -0.8, 0.8);
      const double amp = uniform(rng, b.bump_height_lo, b.bump_height_hi);
      const double w = uniform(rng, b.bump_width_lo, b.bump_width_hi);
      for (Eigen::Index v = 0; v < V.rows(); ++v) {
        const double d2 = (V(v, 0) - cx) * (V(v, 0) - cx) + (V(v, 1) - cy) * (V(v, 1) - cy);
        V(v, 2) += amp * std::exp(-d2 / (2.0 * w * w));
      }
    }
    return TriMesh(V, g.faces());
  }

  if (b.subdivisions < 0) throw UsageError("subdivisions must be >= 0");
  TriMesh s = make_icosphere(b.subdivisions, 1.0);
  Vertices V = s.vertices();
  std::vector<Eigen::Vector3d> centres;
  std::vector<double> amps, widths;
  for (int i = 0; i < b.bumps; ++i) {
    centres.push_back(random_direction(rng));
    amps.push_back(uniform(rng, b.bump_height_lo, b.bump_height_hi));
    widths.push_back(uniform(rng, b.bump_width_lo, b.bump_width_hi));
  }
  for (Eigen::Index v = 0; v < V.rows(); ++v) {
    const Eigen::Vector3d p = V.row(v).transpose().normalized();
    double r = 1.0;
    for (int i = 0; i < b.bumps; ++i) {
      const double ang = std::acos(std::clamp(p.dot(centres[i]), -1.0, 1.0));
      r += amps[i] * std::exp(-ang * ang / (2.0 * widths[i] * widths[i]));
    }
    V.row(v) = (r * p).transpose();
  }
  return TriMesh(V, s.faces());
}

TriMesh bend(const TriMesh& mesh, double angle) {
  if (angle == 0.0) return mesh;
  Vertices V = mesh.vertices();
  const double lo = V.col(0).minCoeff(), hi = V.col(0).maxCoeff();
  const double extent = hi - lo;
  if (!(extent > 0.0)) throw UsageError("cannot bend a mesh with no x extent");
  const double mid = 0.5 * (lo + hi);
  const double zc = 0.5 * (V.col(2).minCoeff() + V.col(2).maxCoeff());
  // Curvature so that the full x extent sweeps `angle`; the centreline
  // z = zc keeps its length.
  const double kappa = angle / extent;
  const double R = 1.0 / kappa;
  for (Eigen::Index v = 0; v < V.rows(); ++v) {
    const double theta = kappa * (V(v, 0) - mid);
    const double rho = R - (V(v, 2) - zc);
    V(v, 0) = mid + rho * std::sin(theta);
    V(v, 2) = zc + R - rho * std::cos(theta);
  }
  return TriMesh(V, mesh.faces());
}

TriMesh local_stretch(const TriMesh& mesh, const Eigen::Vector3d& direction, double amount, double cap_angle) {
  if (!(cap_angle > 0.0)) throw UsageError("stretch cap angle must be positive");
  const Eigen::Vector3d dir = direction.normalized();
  const Eigen::Vector3d c = mesh.centroid();
  Vertices V = mesh.vertices();
  for (Eigen::Index v = 0; v < V.rows(); ++v) {
    const Eigen::Vector3d p = V.row(v).transpose() - c;
    const double len = p.norm();
    if (len == 0.0) continue;
    const double ang = std::acos(std::clamp(p.dot(dir) / len, -1.0, 1.0));
    if (ang >= cap_angle) continue;
    const double w = 0.5 * (1.0 + std::cos(M_PI * ang / cap_angle));
    V.row(v) = (c + p * (1.0 + amount * w)).transpose();
  }
  return TriMesh(V, mesh.faces());
}

double isometric_distortion(const TriMesh& a, const TriMesh& b, std::size_t samples) {
  if (a.n_vertices() != b.n_vertices()) throw UsageError("distortion needs vertex-aligned meshes");
  const auto src = fps_sample(a, std::min(samples, a.n_vertices()), 0);
  const GeodesicSolver sa(a), sb(b);
  double total = 0.0;
  std::size_t count = 0;
  for (int s : src) {
    const auto da = sa.distances(s), db = sb.distances(s);
    for (std::size_t j = 0; j < da.size(); ++j) {
      if (da[j] <= 0.0 || !std::isfinite(da[j])) continue;
      total += std::abs(db[j] - da[j]) / da[j];
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace cyclemap
