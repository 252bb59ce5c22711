#include <cmath>

#include "cyclemap/error.hpp"
#include "cyclemap/mesh.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cyclemap;

namespace {

const char* kTetraOff =
    "OFF\n"
    "4 4 0\n"
    "1 1 1\n1 -1 -1\n-1 1 -1\n-1 -1 1\n"
    "3 0 1 2\n3 0 3 1\n3 0 2 3\n3 1 3 2\n";

TriMesh two_tetrahedra() {
  const TriMesh t = make_tetrahedron();
  Vertices v(8, 3);
  v.topRows(4) = t.vertices();
  v.bottomRows(4) = t.vertices().rowwise() + Eigen::RowVector3d(5, 0, 0);
  Faces f(8, 3);
  f.topRows(4) = t.faces();
  f.bottomRows(4) = t.faces().array() + 4;
  return TriMesh(v, f);
}

}  // namespace

TEST_CASE("load tetrahedron OFF") {
  const auto dir = testutil::temp_dir("mesh_off");
  testutil::write_text(dir / "t.off", kTetraOff);
  const TriMesh m = load_mesh(dir / "t.off");
  CHECK(m.n_vertices() == 4);
  CHECK(m.n_faces() == 4);
  CHECK(m.vertex(1).isApprox(Eigen::Vector3d(1, -1, -1)));
}

TEST_CASE("out-of-range face index is rejected") {
  const auto dir = testutil::temp_dir("mesh_bad");
  testutil::write_text(dir / "bad.off",
                       "OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 9\n");
  CHECK_THROWS_AS(load_mesh(dir / "bad.off"), DataError);
  testutil::write_text(dir / "empty.off", "OFF\n0 0 0\n");
  CHECK_THROWS_AS(load_mesh(dir / "empty.off"), DataError);
  testutil::write_text(dir / "junk.off", "OFF\n4 1 0\n0 0 zero\n");
  try {
    load_mesh(dir / "junk.off");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
}

TEST_CASE("icosphere OBJ at subdivision 3") {
  const TriMesh s = make_icosphere(3);
  // 10*4^l + 2 vertices, 20*4^l faces.
  CHECK(s.n_vertices() == 642);
  CHECK(s.n_faces() == 1280);
  const auto dir = testutil::temp_dir("mesh_obj");
  save_obj(s, dir / "s.obj");
  const TriMesh r = load_mesh(dir / "s.obj");
  CHECK(r.n_vertices() == 642);
  CHECK(r.n_faces() == 1280);
}

TEST_CASE("OBJ polygons are fan-triangulated and negative indices resolve") {
  const auto dir = testutil::temp_dir("mesh_obj_poly");
  testutil::write_text(dir / "q.obj",
                       "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n"
                       "v 0.5 0.5 1\nf -1 1 2\n");
  const TriMesh m = load_mesh(dir / "q.obj");
  CHECK(m.n_faces() == 3);
  CHECK(m.faces().row(1) == Eigen::RowVector3i(0, 2, 3));
  CHECK(m.faces().row(2) == Eigen::RowVector3i(4, 0, 1));
}

TEST_CASE("validate reports boundaries and components") {
  const MeshReport t = validate(make_tetrahedron());
  CHECK(t.is_watertight);
  CHECK(t.n_boundary_edges == 0);
  CHECK(t.n_connected_components == 1);

  Vertices v(3, 3);
  v << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  Faces f(1, 3);
  f << 0, 1, 2;
  const MeshReport tri = validate(TriMesh(v, f));
  CHECK(tri.n_boundary_edges == 3);
  CHECK_FALSE(tri.is_watertight);

  CHECK(validate(two_tetrahedra()).n_connected_components == 2);
}

TEST_CASE("vertex areas sum to the triangle area sum") {
  const TriMesh s = make_icosphere(2);
  double total = 0.0;
  for (Eigen::Index t = 0; t < s.faces().rows(); ++t) {
    const Eigen::Vector3d a = s.vertex(s.faces()(t, 0)), b = s.vertex(s.faces()(t, 1)), c = s.vertex(s.faces()(t, 2));
    total += 0.5 * (b - a).cross(c - a).norm();
  }
  CHECK(std::abs(s.vertex_areas().sum() - total) <= 1e-12 * total);
  CHECK((s.vertex_areas().array() > 0).all());
}

TEST_CASE("normalize to unit area") {
  const TriMesh s = make_icosphere(3);
  const TriMesh u = normalize_unit_area(s);
  CHECK(std::abs(u.total_area() - 1.0) < 1e-9);
  // Icosphere area is a bit under 4*pi; the factor follows the triangle sum.
  CHECK(unit_area_scale(s) == doctest::Approx(1.0 / std::sqrt(s.total_area())).epsilon(1e-12));
  CHECK(unit_area_scale(s) == doctest::Approx(1.0 / std::sqrt(4 * M_PI)).epsilon(0.01));
  CHECK(std::abs(unit_area_scale(u) - 1.0) < 1e-9);
  CHECK((u.centroid() - s.centroid()).norm() < 1e-12);

  Vertices v(3, 3);
  v << 0, 0, 0, 1, 0, 0, 2, 0, 0;
  Faces f(1, 3);
  f << 0, 1, 2;
  CHECK_THROWS_AS(TriMesh(v, f), DataError);
}

TEST_CASE("round trip through every format") {
  const auto dir = testutil::temp_dir("mesh_rt");
  const TriMesh s = transformed(make_icosphere(2, 1.7), testutil::random_rotation(4), {0.3, -2, 1e-3});
  Colors col(static_cast<Eigen::Index>(s.n_vertices()), 3);
  for (Eigen::Index i = 0; i < col.rows(); ++i) col.row(i) << i % 256, (3 * i) % 256, 17;

  auto check_same = [&](const TriMesh& r) {
    REQUIRE(r.n_vertices() == s.n_vertices());
    CHECK(r.faces() == s.faces());
    const double rel = (r.vertices() - s.vertices()).cwiseAbs().maxCoeff() / s.vertices().cwiseAbs().maxCoeff();
    CHECK(rel < 1e-6);
  };
  save_off(s, dir / "a.off");
  check_same(load_mesh(dir / "a.off"));
  save_obj(s, dir / "a.obj");
  check_same(load_mesh(dir / "a.obj"));
  save_ply(s, dir / "a.ply");
  check_same(load_mesh(dir / "a.ply"));
  save_ply(s, dir / "b.ply", PlyEncoding::BinaryLittleEndian, &col);
  const LoadedMesh lb = load_mesh_with_colors(dir / "b.ply");
  check_same(lb.mesh);
  REQUIRE(lb.colors.has_value());
  CHECK(*lb.colors == col);
}

TEST_CASE("binary PLY with float32 coordinates") {
  const auto dir = testutil::temp_dir("mesh_ply32");
  std::string header =
      "ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
      "property float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n";
  std::string body;
  const float xyz[9] = {0, 0, 0, 1, 0, 0, 0, 1, 0};
  body.append(reinterpret_cast<const char*>(xyz), sizeof xyz);
  body.push_back(3);
  const int idx[3] = {0, 1, 2};
  body.append(reinterpret_cast<const char*>(idx), sizeof idx);
  std::ofstream(dir / "t.ply", std::ios::binary) << header << body;
  const TriMesh m = load_mesh(dir / "t.ply");
  CHECK(m.n_vertices() == 3);
  CHECK(m.total_area() == doctest::Approx(0.5));

  std::ofstream(dir / "short.ply", std::ios::binary) << header << body.substr(0, 20);
  CHECK_THROWS_AS(load_mesh(dir / "short.ply"), DataError);
}

TEST_CASE("decimation") {
  const TriMesh s = make_icosphere(2);
  SUBCASE("target equal to n is the identity") {
    const auto r = decimate(s, s.n_vertices());
    CHECK(r.mesh.vertices() == s.vertices());
    for (std::size_t i = 0; i < r.vertex_map.size(); ++i) CHECK(r.vertex_map[i] == static_cast<int>(i));
  }
  SUBCASE("target below four is a usage error") { CHECK_THROWS_AS(decimate(s, 2), UsageError); }
}

TEST_CASE("decimate subdivision-4 icosphere to 642 vertices") {
  const TriMesh s = make_icosphere(4);
  REQUIRE(s.n_vertices() == 2562);
  const auto r = decimate(s, 642);
  CHECK(r.mesh.n_vertices() <= 642);
  CHECK(r.mesh.n_vertices() >= 578);
  const MeshReport rep = validate(r.mesh);
  CHECK(rep.is_watertight);
  CHECK(rep.n_nonmanifold_edges == 0);
  CHECK(rep.n_connected_components == 1);

  // Brute-force distance from every surviving vertex to the original surface.
  double worst = 0.0;
  for (std::size_t i = 0; i < r.mesh.n_vertices(); ++i) {
    const Eigen::Vector3d p = r.mesh.vertex(i);
    double best = 1e300;
    for (Eigen::Index t = 0; t < s.faces().rows(); ++t)
      best = std::min(best, testutil::point_triangle_distance(p, s.vertex(s.faces()(t, 0)), s.vertex(s.faces()(t, 1)),
                                                              s.vertex(s.faces()(t, 2))));
    worst = std::max(worst, best);
  }
  CHECK(worst < 0.02 * s.bounding_box_diagonal());

  REQUIRE(r.vertex_map.size() == s.n_vertices());
  for (int v : r.vertex_map) CHECK((v >= 0 && v < static_cast<int>(r.mesh.n_vertices())));
  for (std::size_t j = 0; j < r.origin.size(); ++j) CHECK(r.vertex_map[r.origin[j]] == static_cast<int>(j));
}

TEST_CASE("decimation keeps an open grid manifold") {
  const TriMesh g = make_grid(20, 20, 0.1);
  const auto before = validate(g);
  const auto r = decimate(g, 200);
  const auto after = validate(r.mesh);
  CHECK(after.n_nonmanifold_edges <= before.n_nonmanifold_edges);
  CHECK(after.n_connected_components == 1);
  CHECK(r.mesh.n_vertices() >= 180);
}
