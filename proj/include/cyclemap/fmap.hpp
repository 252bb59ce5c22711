#pragma once

#include <Eigen/Core>

#include "cyclemap/geodesy.hpp"
#include "cyclemap/spectral.hpp"

namespace cyclemap {

/// C maps source spectral coefficients to target ones (k_Y x k_X).
struct FunctionalMap {
  Eigen::MatrixXd coeffs;
  double reg = 0.0;
};

/// Column-stochastic P (m x n): P(j, i) is the probability that source
/// vertex i matches target vertex j.
struct SoftCorrespondence {
  Eigen::MatrixXd probs;
};

/// argmin_C |CA - B|^2 + reg |C|^2 through the normal equations
/// C = B A^T (A A^T + reg I)^-1. Throws NumericalError when the Gram matrix
/// is singular.
FunctionalMap solve_fmap(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double reg = 1e-3);

/// out(:, i) = |in(:, i)| / sum|in(:, i)|; zero columns become uniform.
/// Returns the per-column sums (zero for the uniform columns).
Eigen::VectorXd column_abs_normalize(const Eigen::MatrixXd& in, Eigen::MatrixXd& out);

/// P = colnormalize(|Psi C Phi^T|).
SoftCorrespondence soft_correspondence(const SpectralBasis& basis_x, const SpectralBasis& basis_y,
                                       const FunctionalMap& C);

/// Per-column argmax (smallest index on ties) with the maximum as confidence.
PointMap hard_assignment(const SoftCorrespondence& P);

}  // namespace cyclemap
