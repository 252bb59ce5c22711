#include "cyclemap/spectral.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cyclemap/error.hpp"

namespace cyclemap {

Laplacian cotan_laplacian(const TriMesh& mesh) {
  const auto n = static_cast<Eigen::Index>(mesh.n_vertices());
  const auto& V = mesh.vertices();
  const auto& F = mesh.faces();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(F.rows()) * 12);
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  for (Eigen::Index t = 0; t < F.rows(); ++t) {
    for (int c = 0; c < 3; ++c) {
      // Angle at corner c is opposite edge (i, j).
      const int o = F(t, c), i = F(t, (c + 1) % 3), j = F(t, (c + 2) % 3);
      const Eigen::Vector3d e1 = V.row(i) - V.row(o);
      const Eigen::Vector3d e2 = V.row(j) - V.row(o);
      if (e1.squaredNorm() == 0.0 || e2.squaredNorm() == 0.0)
        throw NumericalError("zero-length edge in face " + std::to_string(t));
      const double cot = e1.dot(e2) / e1.cross(e2).norm();
      if (!std::isfinite(cot)) throw NumericalError("non-finite cotangent in face " + std::to_string(t));
      const double w = -0.5 * cot;
      trip.emplace_back(i, j, w);
      trip.emplace_back(j, i, w);
      diag(i) -= w;
      diag(j) -= w;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) trip.emplace_back(i, i, diag(i));
  Laplacian lap;
  lap.stiffness.resize(n, n);
  lap.stiffness.setFromTriplets(trip.begin(), trip.end());
  lap.mass = mesh.vertex_areas();
  return lap;
}

SpectralBasis SpectralBasis::truncated(Eigen::Index kk) const {
  if (kk > k()) throw UsageError("cannot truncate basis of size " + std::to_string(k()) + " to " + std::to_string(kk));
  return {eigenvalues.head(kk), eigenfunctions.leftCols(kk), mass};
}

void canonicalize_signs(Eigen::MatrixXd& phi) {
  for (Eigen::Index j = 0; j < phi.cols(); ++j) {
    Eigen::Index best = 0;
    double mag = -1.0;
    for (Eigen::Index i = 0; i < phi.rows(); ++i)
      if (std::abs(phi(i, j)) > mag) {
        mag = std::abs(phi(i, j));
        best = i;
      }
    if (phi(best, j) < 0.0) phi.col(j) *= -1.0;
  }
}

namespace {

SpectralBasis dense_eigenbasis(const Laplacian& lap, Eigen::Index k) {
  const Eigen::MatrixXd W = Eigen::MatrixXd(lap.stiffness);
  const Eigen::VectorXd inv_sqrt_m = lap.mass.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd A = inv_sqrt_m.asDiagonal() * W * inv_sqrt_m.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (A + A.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError("dense eigensolver failed");
  SpectralBasis b;
  b.eigenvalues = es.eigenvalues().head(k);
  b.eigenfunctions = inv_sqrt_m.asDiagonal() * es.eigenvectors().leftCols(k);
  b.mass = lap.mass;
  return b;
}

// M-orthonormalize the columns of X (two passes of modified Gram-Schmidt).
void m_orthonormalize(Eigen::MatrixXd& X, const Eigen::VectorXd& mass) {
  for (int pass = 0; pass < 2; ++pass)
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
      for (Eigen::Index i = 0; i < j; ++i) {
        const double proj = X.col(i).dot(mass.cwiseProduct(X.col(j)));
        X.col(j) -= proj * X.col(i);
      }
      const double nrm = std::sqrt(X.col(j).dot(mass.cwiseProduct(X.col(j))));
      if (!(nrm > 0.0)) throw NumericalError("subspace collapsed during orthonormalization");
      X.col(j) /= nrm;
    }
}

// Shift-invert block subspace iteration with Rayleigh-Ritz. A block, rather
// than a single Krylov vector, resolves exactly repeated eigenvalues.
SpectralBasis shift_invert_eigenbasis(const Laplacian& lap, Eigen::Index k, const EigenOptions& opt) {
  const Eigen::Index n = lap.stiffness.rows();
  const Eigen::Index p = std::min(n, std::max<Eigen::Index>(2 * k, k + 8));
  Eigen::SparseMatrix<double> K = lap.stiffness;
  for (Eigen::Index i = 0; i < n; ++i) K.coeffRef(i, i) -= opt.shift * lap.mass(i);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(K);
  if (solver.info() != Eigen::Success) throw NumericalError("factorization of the shifted Laplacian failed");

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> gauss;
  Eigen::MatrixXd X(n, p);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index i = 0; i < n; ++i) X(i, j) = gauss(rng);
  m_orthonormalize(X, lap.mass);

  const int cap = opt.iteration_cap_per_k * static_cast<int>(k);
  Eigen::VectorXd theta;
  for (int iter = 0; iter < cap; ++iter) {
    Eigen::MatrixXd Y = solver.solve(lap.mass.asDiagonal() * X);
    if (solver.info() != Eigen::Success) throw NumericalError("shifted solve failed");
    m_orthonormalize(Y, lap.mass);
    const Eigen::MatrixXd WY = lap.stiffness * Y;
    Eigen::MatrixXd H = Y.transpose() * WY;
    H = 0.5 * (H + H.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    if (es.info() != Eigen::Success) throw NumericalError("Rayleigh-Ritz eigensolver failed");
    X = Y * es.eigenvectors();
    theta = es.eigenvalues();

    const Eigen::MatrixXd R = lap.stiffness * X.leftCols(k) - lap.mass.asDiagonal() * X.leftCols(k) * theta.head(k).asDiagonal();
    const double scale = std::max(std::abs(theta(k - 1)), 1e-300);
    double worst = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double r = std::sqrt(R.col(j).cwiseAbs2().cwiseQuotient(lap.mass).sum());
      worst = std::max(worst, r / scale);
    }
    if (worst < opt.tolerance) {
      SpectralBasis b;
      b.eigenvalues = theta.head(k);
      b.eigenfunctions = X.leftCols(k);
      b.mass = lap.mass;
      return b;
    }
  }
  throw NumericalError("eigensolver did not converge within " + std::to_string(cap) + " iterations");
}

}  // namespace

SpectralBasis eigenbasis(const Laplacian& lap, Eigen::Index k, const EigenOptions& options) {
  const Eigen::Index n = lap.stiffness.rows();
  if (k < 1) throw UsageError("eigenbasis needs k >= 1");
  if (k >= n) throw UsageError("eigenbasis needs k < n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
  if ((lap.mass.array() <= 0.0).any()) throw DataError("mass matrix has non-positive entries");
  const bool dense = options.method == EigenMethod::Dense ||
                     (options.method == EigenMethod::Auto && n <= options.dense_threshold);
  SpectralBasis b = dense ? dense_eigenbasis(lap, k) : shift_invert_eigenbasis(lap, k, options);
  canonicalize_signs(b.eigenfunctions);
  return b;
}

Eigen::MatrixXd project(const SpectralBasis& basis, const Eigen::MatrixXd& funcs) {
  if (funcs.rows() != basis.n())
    throw UsageError("project: function rows " + std::to_string(funcs.rows()) + " != basis size " +
                     std::to_string(basis.n()));
  return basis.eigenfunctions.transpose() * (basis.mass.asDiagonal() * funcs);
}

Eigen::MatrixXd reconstruct(const SpectralBasis& basis, const Eigen::MatrixXd& coeffs) {
  if (coeffs.rows() != basis.k())
    throw UsageError("reconstruct: coefficient rows " + std::to_string(coeffs.rows()) + " != k " +
                     std::to_string(basis.k()));
  return basis.eigenfunctions * coeffs;
}

}  // namespace cyclemap
