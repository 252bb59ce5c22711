#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "cyclemap/error.hpp"
#include "cyclemap/geodesy.hpp"
#include "cyclemap/mesh.hpp"
#include "doctest.h"

using namespace cyclemap;

namespace {

double mean_rel_error(const std::vector<double>& d, const std::vector<double>& truth, int skip) {
  double sum = 0.0;
  int cnt = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (static_cast<int>(i) == skip) continue;
    sum += std::abs(d[i] - truth[i]) / truth[i];
    ++cnt;
  }
  return sum / cnt;
}

}  // namespace

TEST_CASE("flat grid distances match Euclidean") {
  const TriMesh g = make_grid(50, 50, 0.02);
  const GeodesicSolver solver(g);
  CHECK_FALSE(solver.uses_dijkstra());
  for (int src : {0, 25 * 51 + 25, 13 * 51 + 40}) {
    const auto d = solver.distances(src);
    CHECK(d[src] == 0.0);
    std::vector<double> truth(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) truth[i] = (g.vertex(i) - g.vertex(src)).norm();
    CHECK(mean_rel_error(d, truth, src) < 0.01);
    const auto dj = solver.dijkstra(src);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(d[i] <= dj[i] + 1e-9);
  }
}

TEST_CASE("icosphere distances match great-circle arcs") {
  const TriMesh s = make_icosphere(4);
  const GeodesicSolver solver(s);
  for (int src : {0, 100, 2000}) {
    const auto d = solver.distances(src);
    std::vector<double> truth(d.size());
    const Eigen::Vector3d a = s.vertex(src).normalized();
    for (std::size_t i = 0; i < d.size(); ++i)
      truth[i] = std::acos(std::clamp(a.dot(s.vertex(i).normalized()), -1.0, 1.0));
    CHECK(mean_rel_error(d, truth, src) < 0.02);
    const auto dj = solver.dijkstra(src);
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(d[i] <= dj[i] + 1e-9);
      CHECK(dj[i] <= 1.3 * d[i] + 1e-12);
    }
  }
}

TEST_CASE("obtuse triangles are unfolded, not skipped") {
  // Stretch a grid so every triangle has an obtuse corner.
  Vertices v = make_grid(30, 30, 1.0).vertices();
  for (Eigen::Index i = 0; i < v.rows(); ++i) v(i, 0) += 0.8 * v(i, 1);
  const TriMesh sheared(v, make_grid(30, 30).faces());
  const GeodesicSolver solver(sheared);
  CHECK(solver.n_obtuse_corners() > 0);
  const int src = 15 * 31 + 15;
  const auto d = solver.distances(src);
  std::vector<double> truth(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) truth[i] = (sheared.vertex(i) - sheared.vertex(src)).norm();
  CHECK(mean_rel_error(d, truth, src) < 0.02);
  const auto dj = solver.dijkstra(src);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(d[i] <= dj[i] + 1e-9);
}

TEST_CASE("distance matrix properties") {
  const TriMesh s = make_icosphere(2);
  const DistanceMatrix full = distance_matrix(s);
  const auto n = full.size();
  CHECK(n == static_cast<Eigen::Index>(s.n_vertices()));
  CHECK(full.values.diagonal().isZero(0.0));
  CHECK((full.values - full.values.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((full.values.array() >= 0).all());
  CHECK(full.values.maxCoeff() <= full.diameter());
  CHECK_FALSE(full.has_unreachable);

  // Triangle inequality with 1% slack.
  int violations = 0;
  for (Eigen::Index i = 0; i < n; i += 7)
    for (Eigen::Index j = 0; j < n; j += 5)
      for (Eigen::Index k = 0; k < n; k += 11)
        if (full.values(i, j) > 1.01 * (full.values(i, k) + full.values(k, j)) + 1e-12) ++violations;
  CHECK(violations == 0);

  const DistanceMatrix one = distance_matrix(s, std::vector<int>{5});
  CHECK(one.size() == 1);
  CHECK(one.values(0, 0) == 0.0);

  const std::vector<int> S = {3, 40, 7, 100, 150};
  const DistanceMatrix sub = distance_matrix(s, S);
  const DistanceMatrix restricted = full.restricted(S);
  CHECK(restricted.sample_indices == S);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 5; ++j)
      if (i != j) CHECK(std::abs(sub.values(i, j) - restricted.values(i, j)) <= 0.01 * restricted.values(i, j));
  CHECK(sub.index_of(100) == 3);
  CHECK(sub.index_of(101) == -1);

  const DistanceMatrix big = distance_matrix(scaled(s, 2.5));
  CHECK((big.values - 2.5 * full.values).cwiseAbs().maxCoeff() <= 1e-9 * big.values.maxCoeff());
}

TEST_CASE("disconnected meshes flag unreachable pairs") {
  const TriMesh t = make_tetrahedron();
  Vertices v(8, 3);
  v.topRows(4) = t.vertices();
  v.bottomRows(4) = t.vertices().rowwise() + Eigen::RowVector3d(9, 0, 0);
  Faces f(8, 3);
  f.topRows(4) = t.faces();
  f.bottomRows(4) = t.faces().array() + 4;
  const DistanceMatrix d = distance_matrix(TriMesh(v, f));
  CHECK(d.has_unreachable);
  CHECK(std::isinf(d.values(0, 5)));
  CHECK(std::isfinite(d.values(0, 3)));
  CHECK(std::isfinite(d.diameter()));
}

TEST_CASE("farthest point sampling") {
  const TriMesh s = make_icosphere(2);
  const auto all = fps_sample(s, s.n_vertices(), 1);
  std::set<int> uniq(all.begin(), all.end());
  CHECK(uniq.size() == s.n_vertices());

  const auto two = fps_sample(s, 2, 3);
  const auto d = fast_marching(s, two[0]);
  const double diam = distance_matrix(s).diameter();
  CHECK(d[two[1]] >= 0.95 * diam);

  CHECK(fps_sample(s, 10, 42) == fps_sample(s, 10, 42));
  CHECK_THROWS_AS(fps_sample(s, s.n_vertices() + 1, 0), UsageError);
  CHECK(geodesic_diameter(s) == doctest::Approx(M_PI).epsilon(0.03));
}

TEST_CASE("geodesic error") {
  const TriMesh s = make_icosphere(2);
  const DistanceMatrix D = distance_matrix(s);
  const double area = s.total_area();
  const auto n = s.n_vertices();
  const PointMap gt = PointMap::identity(n);

  const auto zero = geodesic_error(gt, gt, D, area);
  CHECK(zero.sum == 0.0);
  CHECK(zero.mean == 0.0);

  PointMap one = gt;
  one.assignments[10] = 77;
  const auto e1 = geodesic_error(one, gt, D, area);
  CHECK(e1.sum == doctest::Approx(D.values(77, 10) / std::sqrt(area)).epsilon(1e-15));

  std::mt19937_64 rng(5);
  PointMap random = gt;
  for (auto& a : random.assignments) a = static_cast<int>(rng() % n);
  const auto er = geodesic_error(random, gt, D, area);
  double oracle = 0.0;
  for (std::size_t x = 0; x < n; ++x) oracle += D.values(random.assignments[x], static_cast<Eigen::Index>(x)) / std::sqrt(area);
  CHECK(er.sum == oracle);
  CHECK(er.mean == oracle / static_cast<double>(n));

  // Scaling Y scales distances and sqrt(area) alike.
  const DistanceMatrix D2 = distance_matrix(scaled(s, 3.0));
  const auto es = geodesic_error(random, gt, D2, area * 9.0);
  CHECK(es.mean == doctest::Approx(er.mean).epsilon(1e-9));

  const DistanceMatrix part = D.restricted({0, 1, 2});
  CHECK_THROWS_AS(geodesic_error(random, gt, part, area), DataError);
}

TEST_CASE("cumulative curve") {
  CHECK(cumulative_curve({0.1, 0.3}, {0.2, 0.4}) == std::vector<double>{0.5, 1.0});
  CHECK(cumulative_curve({0, 0, 0}, {0.0, 0.1}) == std::vector<double>{1.0, 1.0});
  const std::vector<double> e = {0.05, 0.2, 0.01, 0.13};
  const auto c = cumulative_curve(e, {0.0, 0.1, 0.2, 0.3});
  CHECK(std::is_sorted(c.begin(), c.end()));
  CHECK(c.back() == 1.0);
  CHECK_THROWS_AS(cumulative_curve(e, {0.2, 0.1}), UsageError);
}
