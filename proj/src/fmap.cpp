#include "cyclemap/fmap.hpp"

#include <Eigen/Cholesky>
#include <cmath>

#include "cyclemap/error.hpp"
#include "cyclemap/kernels.hpp"

namespace cyclemap {

FunctionalMap solve_fmap(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double reg) {
  if (A.cols() != B.cols())
    throw UsageError("descriptor coefficient counts differ: " + std::to_string(A.cols()) + " vs " +
                     std::to_string(B.cols()));
  if (!(reg >= 0.0)) throw UsageError("regularization must be nonnegative");
  const auto k = A.rows();
  Eigen::MatrixXd G = A * A.transpose();
  G.diagonal().array() += reg;
  Eigen::LLT<Eigen::MatrixXd> llt(G);
  const double scale = G.diagonal().cwiseAbs().maxCoeff();
  if (llt.info() != Eigen::Success || !(scale > 0.0) || llt.rcond() < 1e-14)
    throw NumericalError("functional map Gram matrix is singular (reg = " + std::to_string(reg) + ", k = " +
                         std::to_string(k) + ")");
  // G is symmetric, so C^T = G^-1 A B^T.
  FunctionalMap fm;
  fm.coeffs = llt.solve(A * B.transpose()).transpose();
  fm.reg = reg;
  if (!fm.coeffs.allFinite()) throw NumericalError("functional map has non-finite entries");
  return fm;
}

Eigen::VectorXd column_abs_normalize(const Eigen::MatrixXd& in, Eigen::MatrixXd& out) {
  out.resize(in.rows(), in.cols());
  Eigen::VectorXd sums(in.cols());
  const auto& kt = kernels::active();
  const auto m = static_cast<std::size_t>(in.rows());
  for (Eigen::Index i = 0; i < in.cols(); ++i) sums(i) = kt.abs_normalize(in.col(i).data(), out.col(i).data(), m);
  return sums;
}

SoftCorrespondence soft_correspondence(const SpectralBasis& basis_x, const SpectralBasis& basis_y,
                                       const FunctionalMap& C) {
  if (C.coeffs.rows() != basis_y.k() || C.coeffs.cols() != basis_x.k())
    throw UsageError("functional map is " + std::to_string(C.coeffs.rows()) + "x" + std::to_string(C.coeffs.cols()) +
                     " but bases have k_Y = " + std::to_string(basis_y.k()) + ", k_X = " + std::to_string(basis_x.k()));
  const Eigen::MatrixXd S = (basis_y.eigenfunctions * C.coeffs) * basis_x.eigenfunctions.transpose();
  SoftCorrespondence P;
  column_abs_normalize(S, P.probs);
  return P;
}

PointMap hard_assignment(const SoftCorrespondence& P) {
  const auto& kt = kernels::active();
  const auto m = static_cast<std::size_t>(P.probs.rows());
  PointMap map;
  map.assignments.resize(static_cast<std::size_t>(P.probs.cols()));
  map.confidences.resize(map.assignments.size());
  for (Eigen::Index i = 0; i < P.probs.cols(); ++i) {
    const std::size_t j = kt.argmax(P.probs.col(i).data(), m);
    map.assignments[i] = static_cast<int>(j);
    map.confidences[i] = P.probs(static_cast<Eigen::Index>(j), i);
  }
  return map;
}

}  // namespace cyclemap
