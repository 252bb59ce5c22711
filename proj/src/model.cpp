#include "cyclemap/model.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <unordered_map>

#include "cyclemap/error.hpp"
#include "cyclemap/kernels.hpp"

namespace cyclemap {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Eigen::MatrixXd relu(const Eigen::MatrixXd& x) { return x.cwiseMax(0.0); }

void check_finite(const Eigen::Ref<const Eigen::MatrixXd>& g, const std::string& where) {
  if (!g.allFinite()) throw NumericalError("non-finite gradient at " + where);
}

void check_stack(const ModelParams& params, const DescriptorStack& stack) {
  if (stack.m() != params.m || stack.s() != params.s)
    throw UsageError("descriptor stack is " + std::to_string(stack.m()) + " scales x " + std::to_string(stack.s()) +
                     " values but the model expects " + std::to_string(params.m) + " x " + std::to_string(params.s));
}

// Fusion and residual blocks, optionally recording a tape.
Eigen::MatrixXd run_refine(const ModelParams& p, const DescriptorStack& stack, ShapeTape* tape) {
  check_stack(p, stack);
  const auto Wa = p.fusion_a_weight();
  const auto ba = p.fusion_a_bias();
  const auto Wb = p.fusion_b_weight();
  const Eigen::Index n = stack.n(), s = p.s;

  Eigen::MatrixXd F = Eigen::MatrixXd::Constant(n, s, p.fusion_b_bias());
  if (tape) tape->fusion_pre.assign(static_cast<std::size_t>(2 * p.m), {});
  for (int k = 0; k < 2 * p.m; ++k) {
    Eigen::MatrixXd U = Eigen::MatrixXd::Constant(n, s, ba(k));
    for (int c = 0; c < p.m; ++c) U += Wa(k, c) * stack.slices[c];
    F += Wb(k) * U.cwiseMax(0.0);
    if (tape) tape->fusion_pre[k] = std::move(U);
  }
  if (tape) {
    tape->block_in.clear();
    tape->block_pre.clear();
  }
  for (int l = 0; l < p.L; ++l) {
    Eigen::MatrixXd Z = F * p.block_w1(l);
    Z.rowwise() += p.block_b1(l).transpose();
    Eigen::MatrixXd next = F + relu(Z) * p.block_w2(l);
    next.rowwise() += p.block_b2(l).transpose();
    if (tape) {
      tape->block_in.push_back(std::move(F));
      tape->block_pre.push_back(std::move(Z));
    }
    F = std::move(next);
  }
  return F;
}

// Adds the parameter gradient of <g, refine(stack)> into grad.
void refine_backward(const ModelParams& p, const DescriptorStack& stack, const ShapeTape& tape, Eigen::MatrixXd g,
                     Eigen::VectorXd& grad, const std::string& side) {
  const Eigen::Index s = p.s;
  for (int l = p.L - 1; l >= 0; --l) {
    const std::string name = side + " block " + std::to_string(l);
    const Eigen::MatrixXd& Z = tape.block_pre[l];
    const Eigen::MatrixXd H = relu(Z);
    const std::size_t off = p.block(l);
    Eigen::Map<Eigen::MatrixXd>(grad.data() + off + p.ss() + s, s, s).noalias() += H.transpose() * g;
    Eigen::Map<Eigen::VectorXd>(grad.data() + off + 2 * p.ss() + s, s) += g.colwise().sum().transpose();
    Eigen::MatrixXd gZ = g * p.block_w2(l).transpose();
    gZ = (Z.array() > 0.0).select(gZ, 0.0);
    Eigen::Map<Eigen::MatrixXd>(grad.data() + off, s, s).noalias() += tape.block_in[l].transpose() * gZ;
    Eigen::Map<Eigen::VectorXd>(grad.data() + off + p.ss(), s) += gZ.colwise().sum().transpose();
    g.noalias() += gZ * p.block_w1(l).transpose();
    check_finite(g, name);
  }

  const auto Wb = p.fusion_b_weight();
  grad(static_cast<Eigen::Index>(p.fb_bias())) += g.sum();
  for (int k = 0; k < 2 * p.m; ++k) {
    const Eigen::MatrixXd& U = tape.fusion_pre[k];
    grad(static_cast<Eigen::Index>(p.fb_weight()) + k) += (U.cwiseMax(0.0).array() * g.array()).sum();
    const Eigen::MatrixXd gU = (U.array() > 0.0).select(Wb(k) * g, 0.0);
    grad(static_cast<Eigen::Index>(p.fa_bias()) + k) += gU.sum();
    for (int c = 0; c < p.m; ++c)
      grad(static_cast<Eigen::Index>(c) * 2 * p.m + k) += (gU.array() * stack.slices[c].array()).sum();
  }
  check_finite(grad, side + " fusion layers");
}

DirectionTape solve_direction(const Eigen::MatrixXd& src, const Eigen::MatrixXd& dst, double reg,
                              const SpectralBasis& basis_src, const SpectralBasis& basis_dst) {
  DirectionTape d;
  d.C = solve_fmap(src, dst, reg);
  Eigen::MatrixXd G = src * src.transpose();
  G.diagonal().array() += reg;
  d.gram.compute(G);
  d.S = (basis_dst.eigenfunctions * d.C.coeffs) * basis_src.eigenfunctions.transpose();
  d.sums = column_abs_normalize(d.S, d.P.probs);
  return d;
}

// Chain rule from dL/dP back to dL/dC for one direction.
Eigen::MatrixXd direction_backward_to_C(const DirectionTape& d, const Eigen::MatrixXd& gP,
                                        const SpectralBasis& basis_src, const SpectralBasis& basis_dst) {
  const auto& kt = kernels::active();
  const auto rows = static_cast<std::size_t>(d.S.rows());
  Eigen::MatrixXd gS(d.S.rows(), d.S.cols());
  for (Eigen::Index i = 0; i < d.S.cols(); ++i)
    kt.abs_normalize_backward(d.S.col(i).data(), d.P.probs.col(i).data(), gP.col(i).data(), d.sums(i),
                              gS.col(i).data(), rows);
  return (basis_dst.eigenfunctions.transpose() * gS) * basis_src.eigenfunctions;
}

// Positions used by the sampled losses.
std::vector<int> all_positions(Eigen::Index n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void check_sample(const DistanceMatrix& d, Eigen::Index n, const char* side) {
  for (int v : d.sample_indices)
    if (v < 0 || v >= n)
      throw UsageError(std::string("distance sample on ") + side + " references vertex " + std::to_string(v) +
                       " of " + std::to_string(n));
}

// Ground truth restricted to the sampled positions: column i of the
// sampled P maps to row position gt[i] of the sampled D_Y.
PointMap sampled_ground_truth(const PointMap& gt, const std::vector<int>& sx, const DistanceMatrix& dy) {
  PointMap out;
  out.assignments.reserve(sx.size());
  for (int v : sx) {
    if (v < 0 || static_cast<std::size_t>(v) >= gt.size()) throw DataError("missing label for source vertex " + std::to_string(v));
    const int pos = dy.index_of(gt.assignments[v]);
    if (pos < 0)
      throw DataError("ground-truth target " + std::to_string(gt.assignments[v]) +
                      " is outside the target distance sample");
    out.assignments.push_back(pos);
  }
  return out;
}

Eigen::MatrixXd supervised_weights(const Eigen::MatrixXd& DY, const PointMap& gt) {
  Eigen::MatrixXd E(DY.rows(), static_cast<Eigen::Index>(gt.size()));
  for (std::size_t i = 0; i < gt.size(); ++i) E.col(static_cast<Eigen::Index>(i)) = DY.col(gt.assignments[i]);
  return E;
}

}  // namespace

std::size_t ModelParams::size_for(int m, int s, int L) {
  const auto M = static_cast<std::size_t>(m), S = static_cast<std::size_t>(s);
  return 2 * M * M + 2 * M + 2 * M + 1 + static_cast<std::size_t>(L) * (2 * S * S + 2 * S);
}

std::string ModelParams::tensor_name(std::size_t i) const {
  if (i < fa_bias()) return "fusion_a.weight";
  if (i < fb_weight()) return "fusion_a.bias";
  if (i < fb_bias()) return "fusion_b.weight";
  if (i == fb_bias()) return "fusion_b.bias";
  const std::size_t rel = i - block(0);
  const std::size_t l = rel / block_size(), r = rel % block_size();
  const char* part = r < ss() ? "w1" : r < ss() + s ? "b1" : r < 2 * ss() + s ? "w2" : "b2";
  return "block" + std::to_string(l) + "." + part;
}

ModelParams init_params(int m, int s, int L, std::uint64_t seed) {
  if (m < 1 || s < 1 || L < 1) throw UsageError("model needs m, s, L >= 1");
  ModelParams p;
  p.m = m;
  p.s = s;
  p.L = L;
  p.data = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ModelParams::size_for(m, s, L)));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;

  const double fusion_std = std::sqrt(2.0 / m);
  for (int k = 0; k < 2 * m; ++k)
    for (int c = 0; c < m; ++c) p.data(c * 2 * m + k) = k == 0 ? 1.0 / m : fusion_std * g(rng);
  p.data(static_cast<Eigen::Index>(p.fb_weight())) = 1.0;

  const double block_std = std::sqrt(2.0 / s);
  for (int l = 0; l < L; ++l) {
    const auto off = static_cast<Eigen::Index>(p.block(l));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(p.ss()); ++i) p.data(off + i) = block_std * g(rng);
  }
  return p;
}

Eigen::MatrixXd refine(const ModelParams& params, const DescriptorStack& stack) {
  return run_refine(params, stack, nullptr);
}

void ShapeContext::check() const {
  if (mesh && static_cast<Eigen::Index>(mesh->n_vertices()) != basis.n())
    throw DataError(name + ": mesh has " + std::to_string(mesh->n_vertices()) + " vertices but basis has " +
                    std::to_string(basis.n()));
  if (stack.n() != basis.n())
    throw DataError(name + ": descriptor stack covers " + std::to_string(stack.n()) + " vertices, basis " +
                    std::to_string(basis.n()));
  if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != basis.n())
    throw DataError(name + ": label count does not match the vertex count");
  if (dist) check_sample(*dist, basis.n(), name.c_str());
}

std::optional<PointMap> ground_truth_from_labels(const ShapeContext& x, const ShapeContext& y) {
  if (x.labels.empty() || y.labels.empty()) return std::nullopt;
  std::unordered_map<int, int> where;
  for (std::size_t j = 0; j < y.labels.size(); ++j) where.emplace(y.labels[j], static_cast<int>(j));
  PointMap gt;
  gt.assignments.reserve(x.labels.size());
  for (int lab : x.labels) {
    auto it = where.find(lab);
    if (it == where.end()) return std::nullopt;
    gt.assignments.push_back(it->second);
  }
  return gt;
}

PairForward forward_pair(const ModelParams& params, const ShapeContext& x, const ShapeContext& y, double reg) {
  if (x.basis.k() != y.basis.k())
    throw UsageError("bases must share k: " + std::to_string(x.basis.k()) + " vs " + std::to_string(y.basis.k()));
  PairForward f;
  f.reg = reg;
  auto side = [&](const ShapeContext& c, ShapeTape& t) {
    t.features = run_refine(params, c.stack, &t);
    t.weighted_basis = c.basis.mass.asDiagonal() * c.basis.eigenfunctions;
    t.coeffs = t.weighted_basis.transpose() * t.features;
  };
  side(x, f.x);
  side(y, f.y);
  f.forward = solve_direction(f.x.coeffs, f.y.coeffs, reg, x.basis, y.basis);
  f.backward = solve_direction(f.y.coeffs, f.x.coeffs, reg, y.basis, x.basis);
  return f;
}

double cyclic_loss(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Pt, const Eigen::MatrixXd& DX) {
  const auto n = DX.rows();
  if (P.cols() != n || Pt.rows() != n || Pt.cols() != P.rows() || DX.cols() != n)
    throw UsageError("cyclic loss: P, P~ and D_X dimensions disagree");
  const Eigen::MatrixXd Q = Pt * P;
  const Eigen::MatrixXd R = DX - Q * DX * Q.transpose();
  return R.squaredNorm() / static_cast<double>(n * n);
}

double isometric_loss(const Eigen::MatrixXd& Pt, const Eigen::MatrixXd& DX, const Eigen::MatrixXd& DY) {
  const auto n = DX.rows();
  if (Pt.rows() != n || Pt.cols() != DY.rows() || DX.cols() != n || DY.cols() != DY.rows())
    throw UsageError("isometric loss: P~, D_X and D_Y dimensions disagree");
  const Eigen::MatrixXd R = DX - Pt * DY * Pt.transpose();
  return R.squaredNorm() / static_cast<double>(n * n);
}

double supervised_loss(const Eigen::MatrixXd& P, const Eigen::MatrixXd& DY, const PointMap& gt) {
  if (static_cast<Eigen::Index>(gt.size()) != P.cols()) throw DataError("supervised loss: ground truth must label every source vertex");
  if (DY.rows() != P.rows() || DY.cols() != P.rows()) throw UsageError("supervised loss: P and D_Y dimensions disagree");
  for (int j : gt.assignments)
    if (j < 0 || j >= DY.rows()) throw DataError("supervised loss: label " + std::to_string(j) + " out of range");
  const Eigen::MatrixXd E = supervised_weights(DY, gt);
  return (P.array() * E.array()).matrix().squaredNorm() / static_cast<double>(P.cols());
}

double coupling_loss(const Eigen::MatrixXd& P, const Eigen::MatrixXd& Pt) {
  if (P.rows() != Pt.cols() || P.cols() != Pt.rows()) throw UsageError("coupling loss: P and P~ dimensions disagree");
  const auto n = P.cols(), m = P.rows();
  return (Pt * P - Eigen::MatrixXd::Identity(n, n)).squaredNorm() +
         (P * Pt - Eigen::MatrixXd::Identity(m, m)).squaredNorm();
}

LossBreakdown::LossBreakdown() : cyclic(kNaN), isometric(kNaN), supervised(kNaN), coupling(kNaN) {}

LossBreakdown evaluate_losses(const PairForward& fwd, const LossInputs& in, const LossWeights& w) {
  const Eigen::MatrixXd& P = fwd.P();
  const Eigen::MatrixXd& Pt = fwd.Pt();
  LossBreakdown out;
  std::vector<int> sx, sy;
  if (in.dx) {
    check_sample(*in.dx, P.cols(), "X");
    sx = in.dx->sample_indices;
    out.cyclic = cyclic_loss(P(Eigen::all, sx), Pt(sx, Eigen::all), in.dx->values);
  }
  if (in.dy) {
    check_sample(*in.dy, P.rows(), "Y");
    sy = in.dy->sample_indices;
    if (in.dx) out.isometric = isometric_loss(Pt(sx, sy), in.dx->values, in.dy->values);
    if (in.gt) {
      const std::vector<int> cols = in.dx ? sx : all_positions(P.cols());
      out.supervised = supervised_loss(P(sy, cols), in.dy->values, sampled_ground_truth(*in.gt, cols, *in.dy));
    }
  }
  out.coupling = coupling_loss(P, Pt);

  auto add = [&](double weight, double value, const char* name) {
    if (weight == 0.0) return;
    if (std::isnan(value)) throw UsageError(std::string(name) + " loss requested without its inputs");
    out.total += weight * value;
  };
  add(w.cyclic, out.cyclic, "cyclic");
  add(w.isometric, out.isometric, "isometric");
  add(w.supervised, out.supervised, "supervised");
  add(w.coupling, out.coupling, "coupling");
  return out;
}

void loss_gradients(const PairForward& fwd, const LossInputs& in, const LossWeights& w, Eigen::MatrixXd& gP,
                    Eigen::MatrixXd& gPt) {
  const Eigen::MatrixXd& P = fwd.P();
  const Eigen::MatrixXd& Pt = fwd.Pt();
  const auto n = P.cols(), m = P.rows();
  if (gP.rows() != m || gP.cols() != n) gP = Eigen::MatrixXd::Zero(m, n);
  if (gPt.rows() != n || gPt.cols() != m) gPt = Eigen::MatrixXd::Zero(n, m);

  if ((w.cyclic != 0.0 || w.isometric != 0.0) && !in.dx) throw UsageError("distance-based loss requested without D_X");
  if ((w.isometric != 0.0 || w.supervised != 0.0) && !in.dy) throw UsageError("target loss requested without D_Y");
  if (w.supervised != 0.0 && !in.gt) throw UsageError("supervised loss requested without ground truth");

  if (w.cyclic != 0.0) {
    const auto& sx = in.dx->sample_indices;
    const Eigen::MatrixXd& D = in.dx->values;
    const auto p = static_cast<double>(sx.size());
    const Eigen::MatrixXd Ps = P(Eigen::all, sx);
    const Eigen::MatrixXd Pts = Pt(sx, Eigen::all);
    const Eigen::MatrixXd Q = Pts * Ps;
    const Eigen::MatrixXd QD = Q * D;
    const Eigen::MatrixXd R = D - QD * Q.transpose();
    const Eigen::MatrixXd GR = (2.0 * w.cyclic / (p * p)) * R;
    const Eigen::MatrixXd gQ = -(GR * Q * D.transpose() + GR.transpose() * QD);
    gPt(sx, Eigen::all) += gQ * Ps.transpose();
    gP(Eigen::all, sx) += Pts.transpose() * gQ;
  }
  if (w.isometric != 0.0) {
    const auto& sx = in.dx->sample_indices;
    const auto& sy = in.dy->sample_indices;
    const auto p = static_cast<double>(sx.size());
    const Eigen::MatrixXd& DX = in.dx->values;
    const Eigen::MatrixXd& DY = in.dy->values;
    const Eigen::MatrixXd Pts = Pt(sx, sy);
    const Eigen::MatrixXd PD = Pts * DY;
    const Eigen::MatrixXd R = DX - PD * Pts.transpose();
    const Eigen::MatrixXd GR = (2.0 * w.isometric / (p * p)) * R;
    gPt(sx, sy) += -(GR * Pts * DY.transpose() + GR.transpose() * PD);
  }
  if (w.supervised != 0.0) {
    const std::vector<int> cols = in.dx ? in.dx->sample_indices : all_positions(n);
    const auto& sy = in.dy->sample_indices;
    const PointMap gt = sampled_ground_truth(*in.gt, cols, *in.dy);
    const Eigen::MatrixXd E = supervised_weights(in.dy->values, gt);
    const Eigen::MatrixXd Ps = P(sy, cols);
    gP(sy, cols) += (2.0 * w.supervised / static_cast<double>(cols.size())) * (Ps.array() * E.array().square()).matrix();
  }
  if (w.coupling != 0.0) {
    const Eigen::MatrixXd G1 = 2.0 * w.coupling * (Pt * P - Eigen::MatrixXd::Identity(n, n));
    const Eigen::MatrixXd G2 = 2.0 * w.coupling * (P * Pt - Eigen::MatrixXd::Identity(m, m));
    gPt += G1 * P.transpose() + P.transpose() * G2;
    gP += Pt.transpose() * G1 + G2 * Pt.transpose();
  }
}

void backward(const ModelParams& params, const ShapeContext& x, const ShapeContext& y, const PairForward& fwd,
              const LossInputs& in, const LossWeights& weights, Eigen::VectorXd& grad) {
  if (grad.size() != static_cast<Eigen::Index>(params.size()))
    throw UsageError("gradient buffer has the wrong size");
  Eigen::MatrixXd gP, gPt;
  loss_gradients(fwd, in, weights, gP, gPt);
  check_finite(gP, "dL/dP");
  check_finite(gPt, "dL/dP~");

  const Eigen::MatrixXd gC = direction_backward_to_C(fwd.forward, gP, x.basis, y.basis);
  const Eigen::MatrixXd gCt = direction_backward_to_C(fwd.backward, gPt, y.basis, x.basis);
  check_finite(gC, "functional map C");
  check_finite(gCt, "functional map C~");

  // C = B A^T G^-1 with G = A A^T + reg I. For Z = gC G^-1:
  //   dB = Z A,  dA = Z^T B - (C^T Z + Z^T C) A.
  const Eigen::MatrixXd& A = fwd.x.coeffs;
  const Eigen::MatrixXd& B = fwd.y.coeffs;
  const Eigen::MatrixXd& C = fwd.forward.C.coeffs;
  const Eigen::MatrixXd& Ct = fwd.backward.C.coeffs;
  const Eigen::MatrixXd Z = fwd.forward.gram.solve(gC.transpose()).transpose();
  const Eigen::MatrixXd Zt = fwd.backward.gram.solve(gCt.transpose()).transpose();
  Eigen::MatrixXd gA = Z.transpose() * B - (C.transpose() * Z + Z.transpose() * C) * A + Zt * B;
  Eigen::MatrixXd gB = Z * A + Zt.transpose() * A - (Ct.transpose() * Zt + Zt.transpose() * Ct) * B;
  check_finite(gA, "source spectral coefficients");
  check_finite(gB, "target spectral coefficients");

  refine_backward(params, x.stack, fwd.x, fwd.x.weighted_basis * gA, grad, "source");
  refine_backward(params, y.stack, fwd.y, fwd.y.weighted_basis * gB, grad, "target");
}

}  // namespace cyclemap
