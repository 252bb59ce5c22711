#include "cyclemap/descriptor.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <cmath>
#include <unordered_map>

#include "cyclemap/error.hpp"
#include "cyclemap/geodesy.hpp"
#include "cyclemap/parallel.hpp"

namespace cyclemap {
namespace {

constexpr int kAzimuth = 8;
constexpr int kSectors = 32;
constexpr std::size_t kMinNeighbors = 5;

// Uniform grid with cell size equal to the query radius, so a ball query
// only touches the 27 surrounding cells.
class BallGrid {
 public:
  BallGrid(const Vertices& pts, double cell) : pts_(pts), cell_(cell) {
    lo_ = pts.colwise().minCoeff().transpose();
    for (Eigen::Index i = 0; i < pts.rows(); ++i) cells_[key(cell_of(pts.row(i).transpose()))].push_back(static_cast<int>(i));
  }

  // Indices within radius of p, in ascending order.
  std::vector<int> query(const Eigen::Vector3d& p, double radius) const {
    std::vector<int> out;
    const auto c = cell_of(p);
    const double r2 = radius * radius;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find(key({c[0] + dx, c[1] + dy, c[2] + dz}));
          if (it == cells_.end()) continue;
          for (int j : it->second)
            if ((pts_.row(j).transpose() - p).squaredNorm() <= r2) out.push_back(j);
        }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::array<long, 3> cell_of(const Eigen::Vector3d& p) const {
    std::array<long, 3> c;
    for (int k = 0; k < 3; ++k) c[k] = static_cast<long>(std::floor((p(k) - lo_(k)) / cell_));
    return c;
  }
  static std::uint64_t key(const std::array<long, 3>& c) {
    auto u = [](long v) { return static_cast<std::uint64_t>(v + (1L << 20)) & 0x1FFFFF; };
    return (u(c[0]) << 42) | (u(c[1]) << 21) | u(c[2]);
  }

  const Vertices& pts_;
  double cell_;
  Eigen::Vector3d lo_;
  std::unordered_map<std::uint64_t, std::vector<int>> cells_;
};

// Flip axis so that most neighbour offsets have a nonnegative projection on
// it; a tied count falls back to the sign of the summed projection.
void disambiguate(Eigen::Vector3d& axis, const std::vector<Eigen::Vector3d>& offsets) {
  long plus = 0, minus = 0;
  double total = 0.0;
  for (const auto& d : offsets) {
    const double p = d.dot(axis);
    (p >= 0 ? plus : minus)++;
    total += p;
  }
  if (minus > plus || (minus == plus && total < 0)) axis = -axis;
}

// Linear split of a continuous bin coordinate between its two nearest bin
// centres; coordinates past the outer centres clamp.
struct Split {
  int lo, hi;
  double w_lo, w_hi;
};
Split clamp_split(double coord, int nbins) {
  coord = std::clamp(coord, 0.0, static_cast<double>(nbins - 1));
  const int lo = std::min(static_cast<int>(std::floor(coord)), nbins - 1);
  const int hi = std::min(lo + 1, nbins - 1);
  const double f = coord - lo;
  return {lo, hi, 1.0 - f, f};
}
Split circular_split(double coord, int nbins) {
  const double fl = std::floor(coord);
  const double f = coord - fl;
  const int lo = ((static_cast<int>(fl) % nbins) + nbins) % nbins;
  return {lo, (lo + 1) % nbins, 1.0 - f, f};
}

void shot_one(const Vertices& V, const Eigen::MatrixXd& normals, const BallGrid& grid, double radius, int bins,
              Eigen::Index i, double* out, bool& sparse) {
  const Eigen::Vector3d p = V.row(i).transpose();
  std::vector<int> nbr = grid.query(p, radius);
  nbr.erase(std::remove(nbr.begin(), nbr.end(), static_cast<int>(i)), nbr.end());
  if (nbr.size() < kMinNeighbors) {
    sparse = true;
    return;
  }

  std::vector<Eigen::Vector3d> offsets;
  std::vector<double> dist;
  offsets.reserve(nbr.size());
  dist.reserve(nbr.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  double wsum = 0.0;
  for (int j : nbr) {
    const Eigen::Vector3d d = V.row(j).transpose() - p;
    const double len = d.norm();
    offsets.push_back(d);
    dist.push_back(len);
    const double w = radius - len;
    cov += w * d * d.transpose();
    wsum += w;
  }
  if (wsum > 0.0) cov /= wsum;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  Eigen::Vector3d x = es.eigenvectors().col(2);
  Eigen::Vector3d z = es.eigenvectors().col(0);
  disambiguate(x, offsets);
  disambiguate(z, offsets);
  const Eigen::Vector3d y = z.cross(x);

  const double half_pi = M_PI / 2.0;
  for (std::size_t q = 0; q < nbr.size(); ++q) {
    if (dist[q] == 0.0) continue;
    const Eigen::Vector3d& d = offsets[q];
    const double lx = d.dot(x), ly = d.dot(y), lz = d.dot(z);
    const double cosine = std::clamp(normals.row(nbr[q]).dot(z), -1.0, 1.0);

    // Bin centres: radial at R/4 and 3R/4, elevation at -pi/4 and pi/4,
    // azimuth at the middle of each 45 degree wedge, cosine evenly on [-1, 1].
    const Split rs = clamp_split(2.0 * dist[q] / radius - 0.5, 2);
    const double elev = std::atan2(lz, std::hypot(lx, ly));
    const Split es2 = clamp_split((elev + M_PI / 4.0) / half_pi, 2);
    const double az = std::atan2(ly, lx);
    const Split as = circular_split((az + M_PI) / (2.0 * M_PI / kAzimuth) - 0.5, kAzimuth);
    const Split cs = clamp_split((1.0 + cosine) / 2.0 * bins - 0.5, bins);

    const int r_idx[2] = {rs.lo, rs.hi};
    const double r_w[2] = {rs.w_lo, rs.w_hi};
    const int e_idx[2] = {es2.lo, es2.hi};
    const double e_w[2] = {es2.w_lo, es2.w_hi};
    const int a_idx[2] = {as.lo, as.hi};
    const double a_w[2] = {as.w_lo, as.w_hi};
    const int c_idx[2] = {cs.lo, cs.hi};
    const double c_w[2] = {cs.w_lo, cs.w_hi};
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 2; ++c) {
          const double wrea = r_w[a] * e_w[b] * a_w[c];
          if (wrea == 0.0) continue;
          const int sector = (r_idx[a] * 2 + e_idx[b]) * kAzimuth + a_idx[c];
          for (int e = 0; e < 2; ++e) out[sector * bins + c_idx[e]] += wrea * c_w[e];
        }
  }

  double norm = 0.0;
  for (int k = 0; k < kSectors * bins; ++k) norm += out[k] * out[k];
  norm = std::sqrt(norm);
  if (norm > 0.0)
    for (int k = 0; k < kSectors * bins; ++k) out[k] /= norm;
}

}  // namespace

Eigen::MatrixXd vertex_normals(const TriMesh& mesh) {
  const auto& V = mesh.vertices();
  const auto& F = mesh.faces();
  Eigen::MatrixXd N = Eigen::MatrixXd::Zero(V.rows(), 3);
  for (Eigen::Index t = 0; t < F.rows(); ++t) {
    const Eigen::Vector3d a = V.row(F(t, 0)), b = V.row(F(t, 1)), c = V.row(F(t, 2));
    // Cross product length is twice the area, so this is area weighting.
    const Eigen::RowVector3d fn = (b - a).cross(c - a).transpose();
    for (int k = 0; k < 3; ++k) N.row(F(t, k)) += fn;
  }
  for (Eigen::Index i = 0; i < N.rows(); ++i) {
    const double len = N.row(i).norm();
    if (len > 0.0) N.row(i) /= len;
  }
  return N;
}

ShotResult shot(const TriMesh& mesh, double radius, int bins, Eigen::Index width) {
  if (!(radius > 0.0)) throw UsageError("SHOT radius must be positive");
  if (bins < 2) throw UsageError("SHOT needs at least 2 cosine bins");
  const Eigen::Index s = static_cast<Eigen::Index>(kSectors) * bins;
  if (width == 0) width = s;
  if (width < s)
    throw UsageError("descriptor width " + std::to_string(width) + " is below 32*bins = " + std::to_string(s));

  const auto& V = mesh.vertices();
  const Eigen::MatrixXd normals = vertex_normals(mesh);
  const BallGrid grid(V, radius);
  const auto n = V.rows();
  // Row-major scratch so each vertex writes a contiguous block.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(n, width);
  std::vector<char> sparse(static_cast<std::size_t>(n), 0);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    bool sp = false;
    shot_one(V, normals, grid, radius, bins, static_cast<Eigen::Index>(i), out.row(static_cast<Eigen::Index>(i)).data(),
             sp);
    sparse[i] = sp;
  });
  ShotResult r;
  r.values = out;
  r.n_sparse = static_cast<std::size_t>(std::count(sparse.begin(), sparse.end(), 1));
  return r;
}

std::vector<double> geometric_scales(int m, double lo, double hi) {
  if (m < 1) throw UsageError("need at least one scale");
  if (!(lo > 0.0) || hi < lo) throw UsageError("scale range must satisfy 0 < lo <= hi");
  std::vector<double> s(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) s[i] = m == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(i) / (m - 1));
  return s;
}

DescriptorStack multiscale_shot(const TriMesh& mesh, const MultiscaleOptions& options) {
  if (!(options.radius_fraction > 0.0)) throw UsageError("radius fraction must be positive");
  return multiscale_shot(mesh, options, options.radius_fraction * geodesic_diameter(mesh));
}

DescriptorStack multiscale_shot(const TriMesh& mesh, const MultiscaleOptions& options, double radius) {
  DescriptorStack st;
  st.scales = geometric_scales(options.m, options.lo, options.hi);
  st.radius_fraction = options.radius_fraction;
  st.radius = radius;
  st.bins = options.bins;
  for (double c : st.scales) {
    ShotResult r = shot(c == 1.0 ? mesh : scaled(mesh, c), radius, options.bins, options.width);
    st.n_sparse += r.n_sparse;
    st.slices.push_back(std::move(r.values));
  }
  return st;
}

}  // namespace cyclemap
