#include <cmath>
#include <random>

#include "cyclemap/error.hpp"
#include "cyclemap/mesh.hpp"
#include "cyclemap/spectral.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cyclemap;

namespace {

double angle_at(const Eigen::Vector3d& apex, const Eigen::Vector3d& p, const Eigen::Vector3d& q) {
  return std::acos((p - apex).normalized().dot((q - apex).normalized()));
}

// Stiffness assembled edge by edge from opposite angles.
Eigen::MatrixXd cotan_oracle(const TriMesh& m) {
  const auto n = static_cast<Eigen::Index>(m.n_vertices());
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index t = 0; t < m.faces().rows(); ++t)
    for (int k = 0; k < 3; ++k) {
      const int o = m.faces()(t, k), i = m.faces()(t, (k + 1) % 3), j = m.faces()(t, (k + 2) % 3);
      const double w = 0.5 / std::tan(angle_at(m.vertex(o), m.vertex(i), m.vertex(j)));
      W(i, j) -= w;
      W(j, i) -= w;
    }
  for (Eigen::Index i = 0; i < n; ++i) W(i, i) = -W.row(i).sum();
  return W;
}

double max_orthonormality_error(const SpectralBasis& b) {
  const Eigen::MatrixXd G = b.eigenfunctions.transpose() * b.mass.asDiagonal() * b.eigenfunctions;
  return (G - Eigen::MatrixXd::Identity(b.k(), b.k())).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("tetrahedron stiffness matches hand-computed cotangents") {
  const TriMesh t = make_tetrahedron();
  const Laplacian L = cotan_laplacian(t);
  const Eigen::MatrixXd W = Eigen::MatrixXd(L.stiffness);
  CHECK((W - cotan_oracle(t)).cwiseAbs().maxCoeff() < 1e-12);
  // Every angle is 60 degrees: both opposite cotangents are 1/sqrt(3).
  CHECK(W(0, 1) == doctest::Approx(-1.0 / std::sqrt(3.0)));
  CHECK((W - W.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((L.mass - t.vertex_areas()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("grid interior weights and null space") {
  // Equilateral grid: shift every other row by half a cell.
  const int nx = 6, ny = 6;
  Vertices v((nx + 1) * (ny + 1), 3);
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) v.row(j * (nx + 1) + i) << i - 0.5 * j, j * std::sqrt(3.0) / 2, 0;
  const TriMesh g(v, make_grid(nx, ny).faces());
  const Laplacian L = cotan_laplacian(g);
  const Eigen::MatrixXd W = Eigen::MatrixXd(L.stiffness);
  const int c = 3 * (nx + 1) + 3;
  int n_neighbors = 0;
  for (int j = 0; j < W.cols(); ++j)
    if (j != c && W(c, j) != 0.0) {
      ++n_neighbors;
      CHECK(W(c, j) == doctest::Approx(-1.0 / std::sqrt(3.0)).epsilon(1e-12));
    }
  CHECK(n_neighbors == 6);

  const TriMesh s = make_icosphere(3);
  const Laplacian Ls = cotan_laplacian(s);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(s.n_vertices()));
  CHECK((Ls.stiffness * ones).norm() < 1e-9 * Eigen::MatrixXd(Ls.stiffness).norm());
}

TEST_CASE("sphere spectrum clusters near l(l+1)") {
  const TriMesh s = make_icosphere(4);
  const SpectralBasis b = eigenbasis(cotan_laplacian(s), 16);
  REQUIRE(b.k() == 16);
  const double expected[16] = {0, 2, 2, 2, 6, 6, 6, 6, 6, 12, 12, 12, 12, 12, 12, 12};
  CHECK(std::abs(b.eigenvalues(0)) < 1e-6 * b.eigenvalues(15));
  for (int i = 1; i < 16; ++i) {
    CAPTURE(i);
    CHECK(std::abs(b.eigenvalues(i) - expected[i]) < 0.05 * expected[i]);
  }
  CHECK(max_orthonormality_error(b) < 1e-6);
  const Eigen::VectorXd phi1 = b.eigenfunctions.col(0);
  CHECK((phi1.maxCoeff() - phi1.minCoeff()) / std::abs(phi1.mean()) < 1e-4);

  const SpectralBasis again = eigenbasis(cotan_laplacian(s), 16);
  CHECK(again.eigenvalues == b.eigenvalues);
  CHECK(again.eigenfunctions == b.eigenfunctions);
}

TEST_CASE("sparse solver agrees with the dense oracle") {
  const TriMesh s = make_icosphere(3);
  const Laplacian L = cotan_laplacian(s);
  EigenOptions dense, sparse;
  dense.method = EigenMethod::Dense;
  sparse.method = EigenMethod::ShiftInvert;
  const SpectralBasis a = eigenbasis(L, 20, dense), b = eigenbasis(L, 20, sparse);
  for (int i = 1; i < 20; ++i) CHECK(std::abs(a.eigenvalues(i) - b.eigenvalues(i)) < 1e-8 * a.eigenvalues(i));
  CHECK(std::abs(b.eigenvalues(0)) < 1e-8);
  CHECK(max_orthonormality_error(b) < 1e-6);
  // Eigenvalues 0 and 1..3 span whole eigenspaces; project a onto b's span.
  const Eigen::MatrixXd overlap = a.eigenfunctions.leftCols(16).transpose() * L.mass.asDiagonal() *
                                  b.eigenfunctions.leftCols(16);
  CHECK((overlap * overlap.transpose() - Eigen::MatrixXd::Identity(16, 16)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("spectrum is rigid-invariant and scales as 1/s^2") {
  const TriMesh s = make_icosphere(2);
  const SpectralBasis b = eigenbasis(cotan_laplacian(s), 12);
  const SpectralBasis r = eigenbasis(cotan_laplacian(transformed(s, testutil::random_rotation(9), {1, 2, 3})), 12);
  const SpectralBasis z = eigenbasis(cotan_laplacian(scaled(s, 3.0)), 12);
  for (int i = 1; i < 12; ++i) {
    CHECK(std::abs(r.eigenvalues(i) - b.eigenvalues(i)) < 1e-8 * b.eigenvalues(i));
    CHECK(std::abs(z.eigenvalues(i) * 9.0 - b.eigenvalues(i)) < 1e-8 * b.eigenvalues(i));
  }
  CHECK((b.eigenvalues.array() >= -1e-9).all());
  for (int i = 1; i < 12; ++i) CHECK(b.eigenvalues(i) >= b.eigenvalues(i - 1));
}

TEST_CASE("projection and reconstruction") {
  const TriMesh s = make_icosphere(2);
  const SpectralBasis b = eigenbasis(cotan_laplacian(s), 10);
  const auto n = b.n();
  CHECK((project(b, b.eigenfunctions) - Eigen::MatrixXd::Identity(10, 10)).cwiseAbs().maxCoeff() < 1e-6);
  const Eigen::MatrixXd c = project(b, Eigen::MatrixXd::Ones(n, 1));
  CHECK(c.bottomRows(9).cwiseAbs().maxCoeff() < 1e-4 * std::abs(c(0, 0)));
  CHECK(reconstruct(b, Eigen::MatrixXd::Zero(10, 2)).isZero(0.0));
  Eigen::MatrixXd e1 = Eigen::MatrixXd::Zero(10, 1);
  e1(0) = 1;
  const Eigen::VectorXd f = reconstruct(b, e1);
  CHECK((f.array() - f(0)).abs().maxCoeff() < 1e-6 * std::abs(f(0)));

  const Eigen::MatrixXd coeffs = Eigen::MatrixXd::Random(10, 3);
  CHECK((project(b, reconstruct(b, coeffs)) - coeffs).cwiseAbs().maxCoeff() < 1e-8);

  CHECK_THROWS_AS(project(b, Eigen::MatrixXd::Ones(n + 1, 1)), UsageError);
  CHECK_THROWS_AS(reconstruct(b, Eigen::MatrixXd::Ones(9, 1)), UsageError);
}

TEST_CASE("full basis on a tetrahedron reproduces any function") {
  const TriMesh t = make_tetrahedron();
  EigenOptions dense;
  dense.method = EigenMethod::Dense;
  const Laplacian L = cotan_laplacian(t);
  CHECK_THROWS(eigenbasis(L, 4));
  // k = n is outside the solver's contract, so build the full basis from the
  // dense generalized problem directly.
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(L.stiffness),
                                                               Eigen::MatrixXd(L.mass.asDiagonal()));
  SpectralBasis full{es.eigenvalues(), es.eigenvectors(), L.mass};
  const Eigen::MatrixXd F = Eigen::MatrixXd::Random(4, 5);
  CHECK((reconstruct(full, project(full, F)) - F).cwiseAbs().maxCoeff() < 1e-8);
  const SpectralBasis three = eigenbasis(L, 3, dense);
  CHECK(three.k() == 3);
}

TEST_CASE("sign canonicalization") {
  Eigen::MatrixXd m(4, 2);
  m << 0.5, 1, -0.9, -1, 0.1, 0.3, 0.2, 0.2;
  canonicalize_signs(m);
  CHECK(m(1, 0) == 0.9);
  // Tie between rows 0 and 1 in column 1: the first index decides.
  CHECK(m(0, 1) == 1.0);
  CHECK(m(1, 1) == -1.0);
}
