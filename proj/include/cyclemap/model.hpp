#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cyclemap/descriptor.hpp"
#include "cyclemap/fmap.hpp"
#include "cyclemap/geodesy.hpp"
#include "cyclemap/spectral.hpp"

namespace cyclemap {

/// The one parameter set shared by both shapes and both directions, stored
/// flat in declaration order:
///   fusion_a weight (2m x m, column-major), fusion_a bias (2m),
///   fusion_b weight (2m), fusion_b bias (1),
///   then per block: W1 (s x s), b1 (s), W2 (s x s), b2 (s).
/// Features are row vectors, so a block computes F + relu(F W1 + b1) W2 + b2.
struct ModelParams {
  int m = 0;
  int s = 0;
  int L = 0;
  Eigen::VectorXd data;

  static std::size_t size_for(int m, int s, int L);
  std::size_t size() const { return static_cast<std::size_t>(data.size()); }

  Eigen::Map<const Eigen::MatrixXd> fusion_a_weight() const { return cmat(0, 2 * m, m); }
  Eigen::Map<const Eigen::VectorXd> fusion_a_bias() const { return cvec(fa_bias(), 2 * m); }
  Eigen::Map<const Eigen::VectorXd> fusion_b_weight() const { return cvec(fb_weight(), 2 * m); }
  double fusion_b_bias() const { return data(static_cast<Eigen::Index>(fb_bias())); }
  Eigen::Map<const Eigen::MatrixXd> block_w1(int l) const { return cmat(block(l), s, s); }
  Eigen::Map<const Eigen::VectorXd> block_b1(int l) const { return cvec(block(l) + ss(), s); }
  Eigen::Map<const Eigen::MatrixXd> block_w2(int l) const { return cmat(block(l) + ss() + s, s, s); }
  Eigen::Map<const Eigen::VectorXd> block_b2(int l) const { return cvec(block(l) + 2 * ss() + s, s); }

  // Offsets into the flat vector, shared with gradients.
  std::size_t fa_bias() const { return static_cast<std::size_t>(2 * m * m); }
  std::size_t fb_weight() const { return fa_bias() + 2 * m; }
  std::size_t fb_bias() const { return fb_weight() + 2 * m; }
  std::size_t block(int l) const { return fb_bias() + 1 + static_cast<std::size_t>(l) * block_size(); }
  std::size_t block_size() const { return 2 * ss() + 2 * static_cast<std::size_t>(s); }
  std::size_t ss() const { return static_cast<std::size_t>(s) * static_cast<std::size_t>(s); }

  /// Name of the tensor holding flat index i, for diagnostics.
  std::string tensor_name(std::size_t i) const;

 private:
  Eigen::Map<const Eigen::MatrixXd> cmat(std::size_t off, Eigen::Index r, Eigen::Index c) const {
    return {data.data() + off, r, c};
  }
  Eigen::Map<const Eigen::VectorXd> cvec(std::size_t off, Eigen::Index n) const { return {data.data() + off, n}; }
};

/// Fusion starts as the mean over scales: the first hidden unit averages the
/// scales and is the only one fusion_b reads; the other hidden units get
/// variance-scaled random weights so they receive gradient once fusion_b
/// moves. Block W1 is variance-scaled random, W2 and both biases are zero,
/// so each block starts as the identity.
ModelParams init_params(int m, int s, int L, std::uint64_t seed);

/// Fused and refined n x s features (no tape).
Eigen::MatrixXd refine(const ModelParams& params, const DescriptorStack& stack);

/// Everything the losses and the backward pass need about one shape.
struct ShapeContext {
  std::string name;
  std::shared_ptr<const TriMesh> mesh;
  SpectralBasis basis;
  DescriptorStack stack;
  std::shared_ptr<const DistanceMatrix> dist;
  /// Optional template label per vertex; equal labels mean correspondence.
  std::vector<int> labels;

  Eigen::Index n() const { return basis.n(); }
  void check() const;
};

/// Ground-truth map X -> Y from matching labels, or nullopt when some label
/// of X is absent from Y.
std::optional<PointMap> ground_truth_from_labels(const ShapeContext& x, const ShapeContext& y);

struct ShapeTape {
  std::vector<Eigen::MatrixXd> fusion_pre;  // 2m pre-activations, n x s
  std::vector<Eigen::MatrixXd> block_in;    // L block inputs
  std::vector<Eigen::MatrixXd> block_pre;   // L inner pre-activations
  Eigen::MatrixXd features;                 // refined output
  Eigen::MatrixXd weighted_basis;           // M Phi
  Eigen::MatrixXd coeffs;                   // (M Phi)^T F, k x s
};

struct DirectionTape {
  FunctionalMap C;
  Eigen::LLT<Eigen::MatrixXd> gram;  // factor of A A^T + reg I for the source side
  Eigen::MatrixXd S;                 // signed product before abs and normalization
  Eigen::VectorXd sums;              // column sums of |S|
  SoftCorrespondence P;
};

struct PairForward {
  ShapeTape x, y;
  DirectionTape forward;   // X -> Y, P is m x n
  DirectionTape backward;  // Y -> X, P~ is n x m
  double reg = 0.0;

  const Eigen::MatrixXd& P() const { return forward.P.probs; }
  const Eigen::MatrixXd& Pt() const { return backward.P.probs; }
};

PairForward forward_pair(const ModelParams& params, const ShapeContext& x, const ShapeContext& y, double reg = 1e-3);

// Losses on explicit matrices. P is m x n, Pt is n x m.
double cyclic_loss(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Pt, const Eigen::MatrixXd& DX);
double isometric_loss(const Eigen::MatrixXd& Pt, const Eigen::MatrixXd& DX, const Eigen::MatrixXd& DY);
double supervised_loss(const Eigen::MatrixXd& P, const Eigen::MatrixXd& DY, const PointMap& gt);
double coupling_loss(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Pt);

struct LossWeights {
  double cyclic = 0.0;
  double isometric = 0.0;
  double supervised = 0.0;
  double coupling = 0.0;
};

/// Unpopulated terms are NaN.
struct LossBreakdown {
  double cyclic;
  double isometric;
  double supervised;
  double coupling;
  double total = 0.0;
  LossBreakdown();
};

/// Distances and labels the losses read. D_X and D_Y may cover an FPS
/// subset; the losses then use the matching rows and columns of P and P~.
struct LossInputs {
  const DistanceMatrix* dx = nullptr;
  const DistanceMatrix* dy = nullptr;
  const PointMap* gt = nullptr;
};

/// Every term whose inputs are available; total is the weighted sum.
LossBreakdown evaluate_losses(const PairForward& fwd, const LossInputs& in, const LossWeights& weights);

/// Gradient of sum_t weight_t * loss_t with respect to the flat parameters,
/// accumulated into grad (which must have params.size() entries).
void backward(const ModelParams& params, const ShapeContext& x, const ShapeContext& y, const PairForward& fwd,
              const LossInputs& in, const LossWeights& weights, Eigen::VectorXd& grad);

/// Gradients of each loss with respect to P and P~ (adds into gP, gPt).
void loss_gradients(const PairForward& fwd, const LossInputs& in, const LossWeights& weights, Eigen::MatrixXd& gP,
                    Eigen::MatrixXd& gPt);

}  // namespace cyclemap
