#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cyclemap {

using Vertices = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Colors = Eigen::Matrix<unsigned char, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Immutable triangle mesh. Construction enforces the invariants: face indices
/// in range, three distinct indices per face, every triangle's area above
/// 1e-12 of the total, and every vertex referenced by at least one face (so
/// barycentric vertex areas are strictly positive).
class TriMesh {
 public:
  TriMesh(Vertices vertices, Faces faces);

  const Vertices& vertices() const { return vertices_; }
  const Faces& faces() const { return faces_; }
  std::size_t n_vertices() const { return static_cast<std::size_t>(vertices_.rows()); }
  std::size_t n_faces() const { return static_cast<std::size_t>(faces_.rows()); }

  /// One third of the incident triangle areas per vertex.
  const Eigen::VectorXd& vertex_areas() const { return vertex_areas_; }
  const Eigen::VectorXd& face_areas() const { return face_areas_; }
  double total_area() const { return total_area_; }

  Eigen::Vector3d vertex(std::size_t i) const { return vertices_.row(static_cast<Eigen::Index>(i)).transpose(); }
  Eigen::Vector3d centroid() const { return vertices_.colwise().mean().transpose(); }
  double bounding_box_diagonal() const;

 private:
  Vertices vertices_;
  Faces faces_;
  Eigen::VectorXd face_areas_;
  Eigen::VectorXd vertex_areas_;
  double total_area_ = 0.0;
};

struct MeshReport {
  std::size_t n_vertices = 0;
  std::size_t n_faces = 0;
  std::size_t n_boundary_edges = 0;
  std::size_t n_nonmanifold_edges = 0;
  std::size_t n_connected_components = 0;
  bool is_watertight = false;
};

MeshReport validate(const TriMesh& mesh);

/// Per-vertex connected-component labels (0-based, ordered by lowest vertex).
std::vector<int> component_labels(const TriMesh& mesh, int* n_components = nullptr);

/// Factor that brings the total area to 1.
double unit_area_scale(const TriMesh& mesh);
/// Uniform scaling about the vertex centroid to unit total area.
TriMesh normalize_unit_area(const TriMesh& mesh);
/// Uniform scaling about the origin (used by the multi-scale descriptor).
TriMesh scaled(const TriMesh& mesh, double factor);
/// Rigid motion x -> R x + t.
TriMesh transformed(const TriMesh& mesh, const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

// Procedural meshes.
TriMesh make_icosphere(int subdivisions, double radius = 1.0);
/// Regular (nx+1) x (ny+1) vertex grid in the z=0 plane, each quad split by
/// its diagonal.
TriMesh make_grid(int nx, int ny, double spacing = 1.0);
TriMesh make_tetrahedron();

// File I/O.
enum class MeshFormat { Off, Obj, Ply };
enum class PlyEncoding { Ascii, BinaryLittleEndian };

std::optional<MeshFormat> format_from_extension(const std::filesystem::path& path);

struct LoadedMesh {
  TriMesh mesh;
  std::optional<Colors> colors;  // per-vertex RGB when the PLY carries it
};

TriMesh load_mesh(const std::filesystem::path& path, std::optional<MeshFormat> format = std::nullopt);
LoadedMesh load_mesh_with_colors(const std::filesystem::path& path,
                                 std::optional<MeshFormat> format = std::nullopt);

void save_off(const TriMesh& mesh, const std::filesystem::path& path);
void save_obj(const TriMesh& mesh, const std::filesystem::path& path);
void save_ply(const TriMesh& mesh, const std::filesystem::path& path, PlyEncoding encoding = PlyEncoding::Ascii,
              const Colors* colors = nullptr);
void save_mesh(const TriMesh& mesh, const std::filesystem::path& path, std::optional<MeshFormat> format = std::nullopt);

// Quadric-error decimation.
struct DecimationResult {
  TriMesh mesh;
  /// original vertex -> decimated vertex it collapsed into
  std::vector<int> vertex_map;
  /// decimated vertex -> original vertex index that survived as it
  std::vector<int> origin;
};

struct DecimationOptions {
  double boundary_penalty = 100.0;
};

DecimationResult decimate(const TriMesh& mesh, std::size_t target_n, const DecimationOptions& options = {});

}  // namespace cyclemap
