#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "cyclemap/mesh.hpp"

namespace cyclemap {

/// Cotangent stiffness W (positive semidefinite, rows sum to zero) and the
/// lumped barycentric mass.
struct Laplacian {
  Eigen::SparseMatrix<double> stiffness;
  Eigen::VectorXd mass;
};

/// k generalized eigenpairs of W phi = lambda M phi, ascending, with
/// Phi^T M Phi = I.
struct SpectralBasis {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenfunctions;  // n x k
  Eigen::VectorXd mass;

  Eigen::Index n() const { return eigenfunctions.rows(); }
  Eigen::Index k() const { return eigenfunctions.cols(); }
  /// Leading k' columns; throws if k' exceeds k.
  SpectralBasis truncated(Eigen::Index k) const;
};

Laplacian cotan_laplacian(const TriMesh& mesh);

enum class EigenMethod { Auto, Dense, ShiftInvert };

struct EigenOptions {
  EigenMethod method = EigenMethod::Auto;
  Eigen::Index dense_threshold = 600;  // Auto uses the dense solver up to this n
  double shift = -1e-8;
  double tolerance = 1e-10;
  int iteration_cap_per_k = 50;
  unsigned seed = 0x5eed;
};

SpectralBasis eigenbasis(const Laplacian& lap, Eigen::Index k, const EigenOptions& options = {});

/// A = Phi^T M F
Eigen::MatrixXd project(const SpectralBasis& basis, const Eigen::MatrixXd& funcs);
/// Phi * coeffs
Eigen::MatrixXd reconstruct(const SpectralBasis& basis, const Eigen::MatrixXd& coeffs);

/// Flip each column so its largest-magnitude entry is positive (first index
/// wins ties).
void canonicalize_signs(Eigen::MatrixXd& eigenfunctions);

}  // namespace cyclemap
