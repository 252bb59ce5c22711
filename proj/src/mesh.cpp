#include "cyclemap/mesh.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include "cyclemap/error.hpp"

namespace cyclemap {

TriMesh::TriMesh(Vertices vertices, Faces faces) : vertices_(std::move(vertices)), faces_(std::move(faces)) {
  const Eigen::Index n = vertices_.rows();
  const Eigen::Index f = faces_.rows();
  if (n == 0 || f == 0) throw DataError("empty mesh");
  if (!vertices_.allFinite()) throw DataError("non-finite vertex coordinate");

  face_areas_.resize(f);
  for (Eigen::Index t = 0; t < f; ++t) {
    const int a = faces_(t, 0), b = faces_(t, 1), c = faces_(t, 2);
    for (int idx : {a, b, c})
      if (idx < 0 || idx >= n)
        throw DataError("face " + std::to_string(t) + " index " + std::to_string(idx) + " out of range [0, " +
                        std::to_string(n) + ")");
    if (a == b || b == c || a == c) throw DataError("face " + std::to_string(t) + " repeats a vertex index");
    const Eigen::Vector3d e1 = vertices_.row(b) - vertices_.row(a);
    const Eigen::Vector3d e2 = vertices_.row(c) - vertices_.row(a);
    face_areas_(t) = 0.5 * e1.cross(e2).norm();
  }
  total_area_ = face_areas_.sum();
  if (!(total_area_ > 0.0)) throw DataError("zero-area mesh");
  for (Eigen::Index t = 0; t < f; ++t)
    if (!(face_areas_(t) > 1e-12 * total_area_))
      throw DataError("face " + std::to_string(t) + " is degenerate (area " + std::to_string(face_areas_(t)) + ")");

  vertex_areas_ = Eigen::VectorXd::Zero(n);
  for (Eigen::Index t = 0; t < f; ++t)
    for (int k = 0; k < 3; ++k) vertex_areas_(faces_(t, k)) += face_areas_(t) / 3.0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(vertex_areas_(i) > 0.0)) throw DataError("vertex " + std::to_string(i) + " is not referenced by any face");
}

double TriMesh::bounding_box_diagonal() const {
  return (vertices_.colwise().maxCoeff() - vertices_.colwise().minCoeff()).norm();
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

std::vector<int> component_labels(const TriMesh& mesh, int* n_components) {
  const auto n = mesh.n_vertices();
  UnionFind uf(n);
  const auto& F = mesh.faces();
  for (Eigen::Index t = 0; t < F.rows(); ++t) {
    uf.unite(F(t, 0), F(t, 1));
    uf.unite(F(t, 1), F(t, 2));
  }
  std::vector<int> label(n, -1);
  std::unordered_map<int, int> root_to_label;
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int r = uf.find(static_cast<int>(i));
    auto [it, inserted] = root_to_label.emplace(r, next);
    if (inserted) ++next;
    label[i] = it->second;
  }
  if (n_components) *n_components = next;
  return label;
}

MeshReport validate(const TriMesh& mesh) {
  MeshReport r;
  r.n_vertices = mesh.n_vertices();
  r.n_faces = mesh.n_faces();
  std::map<std::pair<int, int>, int> edge_count;
  const auto& F = mesh.faces();
  for (Eigen::Index t = 0; t < F.rows(); ++t)
    for (int k = 0; k < 3; ++k) {
      int a = F(t, k), b = F(t, (k + 1) % 3);
      if (a > b) std::swap(a, b);
      ++edge_count[{a, b}];
    }
  for (const auto& [edge, count] : edge_count) {
    if (count == 1) ++r.n_boundary_edges;
    if (count > 2) ++r.n_nonmanifold_edges;
  }
  int comps = 0;
  component_labels(mesh, &comps);
  r.n_connected_components = static_cast<std::size_t>(comps);
  r.is_watertight = r.n_boundary_edges == 0 && r.n_nonmanifold_edges == 0;
  return r;
}

double unit_area_scale(const TriMesh& mesh) {
  if (!(mesh.total_area() > 0.0)) throw DataError("zero-area mesh");
  return 1.0 / std::sqrt(mesh.total_area());
}

TriMesh normalize_unit_area(const TriMesh& mesh) {
  const double s = unit_area_scale(mesh);
  const Eigen::RowVector3d c = mesh.vertices().colwise().mean();
  Vertices v = mesh.vertices();
  v.rowwise() -= c;
  v *= s;
  v.rowwise() += c;
  return TriMesh(std::move(v), mesh.faces());
}

TriMesh scaled(const TriMesh& mesh, double factor) {
  if (!(factor > 0.0)) throw UsageError("scale factor must be positive");
  return TriMesh(mesh.vertices() * factor, mesh.faces());
}

TriMesh transformed(const TriMesh& mesh, const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation) {
  Vertices v = mesh.vertices() * rotation.transpose();
  v.rowwise() += translation.transpose();
  return TriMesh(std::move(v), mesh.faces());
}

TriMesh make_tetrahedron() {
  Vertices v(4, 3);
  v << 1, 1, 1, 1, -1, -1, -1, 1, -1, -1, -1, 1;
  Faces f(4, 3);
  f << 0, 1, 2, 0, 3, 1, 0, 2, 3, 1, 3, 2;
  return TriMesh(std::move(v), std::move(f));
}

TriMesh make_icosphere(int subdivisions, double radius) {
  if (subdivisions < 0) throw UsageError("icosphere subdivisions must be >= 0");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> verts = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                                        {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : verts) p.normalize();
  std::vector<std::array<int, 3>> faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                           {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                           {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                           {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int level = 0; level < subdivisions; ++level) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      verts.push_back((verts[a] + verts[b]).normalized());
      const int id = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  Vertices v(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = radius * verts[i].transpose();
  Faces f(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i)
    f.row(static_cast<Eigen::Index>(i)) << faces[i][0], faces[i][1], faces[i][2];
  return TriMesh(std::move(v), std::move(f));
}

TriMesh make_grid(int nx, int ny, double spacing) {
  if (nx < 1 || ny < 1) throw UsageError("grid needs at least one cell per axis");
  const int cols = nx + 1;
  Vertices v((nx + 1) * (ny + 1), 3);
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) v.row(j * cols + i) << i * spacing, j * spacing, 0.0;
  Faces f(2 * nx * ny, 3);
  int t = 0;
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int a = j * cols + i, b = a + 1, c = a + cols, d = c + 1;
      f.row(t++) << a, b, d;
      f.row(t++) << a, d, c;
    }
  return TriMesh(std::move(v), std::move(f));
}

}  // namespace cyclemap
