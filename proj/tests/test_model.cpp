#include <cmath>
#include <numeric>
#include <random>

#include "cyclemap/error.hpp"
#include "cyclemap/geodesy.hpp"
#include "cyclemap/model.hpp"
#include "doctest.h"
#include "loss_oracles.hpp"
#include "test_util.hpp"

using namespace cyclemap;
using namespace oracle;

TEST_CASE("parameter layout and initialization") {
  const ModelParams p = init_params(5, 8, 3, 7);
  CHECK(p.size() == ModelParams::size_for(5, 8, 3));
  CHECK(p.size() == 2 * 25 + 10 + 10 + 1 + 3 * (2 * 64 + 16));
  CHECK(p.tensor_name(0) == "fusion_a.weight");
  CHECK(p.tensor_name(p.fb_bias()) == "fusion_b.bias");
  CHECK(p.tensor_name(p.block(2) + p.ss() + 8 + 3) == "block2.w2");
  CHECK(p.block_w2(1).isZero(0.0));
  CHECK(p.block_b1(0).isZero(0.0));
  CHECK(p.fusion_a_weight().row(0).isConstant(0.2, 0.0));

  const ModelParams same = init_params(5, 8, 3, 7);
  CHECK(same.data == p.data);
  const ModelParams other = init_params(5, 8, 3, 8);
  CHECK((other.block_w1(0) - p.block_w1(0)).cwiseAbs().maxCoeff() > 0.0);
  CHECK_THROWS_AS(init_params(0, 8, 3, 1), UsageError);
}

TEST_CASE("fresh parameters refine to the mean over scales") {
  const ModelParams p = init_params(5, 16, 2, 3);
  const DescriptorStack st = random_stack(30, 5, 16);
  const Eigen::MatrixXd F = refine(p, st);
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(30, 16);
  for (const auto& s : st.slices) mean += s;
  mean /= 5.0;
  CHECK((F - mean).cwiseAbs().maxCoeff() < 1e-15);

  // Blocks alone are the identity bit for bit.
  ModelParams no_blocks = p;
  no_blocks.L = 0;
  no_blocks.data.conservativeResize(static_cast<Eigen::Index>(ModelParams::size_for(5, 16, 0)));
  CHECK(refine(no_blocks, st) == F);
  CHECK_THROWS_AS(refine(p, random_stack(30, 4, 16)), UsageError);
}

TEST_CASE("refine is a per-vertex operator") {
  const ModelParams p = random_params(3, 6, 2, 0.5);
  const DescriptorStack st = random_stack(9, 3, 6);
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng());
  DescriptorStack shuffled = st;
  for (auto& s : shuffled.slices) s = s(perm, Eigen::all).eval();
  const Eigen::MatrixXd a = refine(p, st), b = refine(p, shuffled);
  CHECK((b - a(perm, Eigen::all)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single vertex matches layer-by-layer scalar arithmetic") {
  const int m = 3, s = 4, L = 2;
  const ModelParams p = random_params(m, s, L, 0.7);
  const DescriptorStack st = random_stack(1, m, s);
  const Eigen::MatrixXd F = refine(p, st);

  std::vector<double> f(s);
  for (int d = 0; d < s; ++d) {
    double out = p.data(static_cast<Eigen::Index>(p.fb_bias()));
    for (int k = 0; k < 2 * m; ++k) {
      double u = p.data(static_cast<Eigen::Index>(p.fa_bias()) + k);
      for (int c = 0; c < m; ++c) u += p.data(c * 2 * m + k) * st.slices[c](0, d);
      out += p.data(static_cast<Eigen::Index>(p.fb_weight()) + k) * std::max(u, 0.0);
    }
    f[d] = out;
  }
  for (int l = 0; l < L; ++l) {
    const auto off = static_cast<Eigen::Index>(p.block(l));
    std::vector<double> h(s), next(s);
    for (int j = 0; j < s; ++j) {
      double z = p.data(off + s * s + j);
      for (int i = 0; i < s; ++i) z += f[i] * p.data(off + j * s + i);
      h[j] = std::max(z, 0.0);
    }
    for (int j = 0; j < s; ++j) {
      double y = p.data(off + 2 * s * s + s + j);
      for (int i = 0; i < s; ++i) y += h[i] * p.data(off + s * s + s + j * s + i);
      next[j] = f[j] + y;
    }
    f = next;
  }
  for (int d = 0; d < s; ++d) CHECK(std::abs(F(0, d) - f[d]) < 1e-10);
}

TEST_CASE("forward pair shapes and symmetry") {
  const ShapeContext X = make_context(jittered_icosahedron(0.05, 1), 4, 2, 6, "X");
  const ShapeContext Y = make_context(jittered_icosahedron(0.05, 2), 4, 2, 6, "Y");
  const ModelParams p = random_params(2, 6, 1, 0.5);
  const PairForward f = forward_pair(p, X, Y);
  CHECK(f.P().rows() == 12);
  CHECK((f.P().colwise().sum().array() - 1).abs().maxCoeff() < 1e-12);
  CHECK((f.Pt().colwise().sum().array() - 1).abs().maxCoeff() < 1e-12);
  const PairForward g = forward_pair(p, Y, X);
  CHECK(g.P() == f.Pt());
  CHECK(g.Pt() == f.P());
}

TEST_CASE("loss zero conditions") {
  const TriMesh ico = make_icosphere(0);
  const DistanceMatrix D = distance_matrix(ico);
  const auto n = D.size();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  CHECK(cyclic_loss(I, I, D.values) == 0.0);

  // A rotation of the icosahedron relabels vertices without changing D.
  const Eigen::Matrix3d R = Eigen::AngleAxisd(2 * M_PI / 5, ico.vertex(0).normalized()).toRotationMatrix();
  std::vector<int> sym(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index w;
    (ico.vertices().rowwise() - (R * ico.vertex(i)).transpose()).rowwise().squaredNorm().minCoeff(&w);
    sym[i] = static_cast<int>(w);
  }
  const Eigen::MatrixXd Pi = permutation(sym);
  CHECK((Pi * D.values * Pi.transpose() - D.values).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(cyclic_loss(Pi, I, D.values) < 1e-24);

  // Relabelled, rigidly moved copy: P~ = Pi^T is exactly the isometry.
  std::vector<int> shuffle(static_cast<std::size_t>(n));
  std::iota(shuffle.begin(), shuffle.end(), 0);
  std::shuffle(shuffle.begin(), shuffle.end(), rng());
  Vertices vy(n, 3);
  const Eigen::Matrix3d Rr = testutil::random_rotation(5);
  for (Eigen::Index i = 0; i < n; ++i) vy.row(shuffle[i]) = (Rr * ico.vertex(i)).transpose();
  Faces fy = ico.faces();
  for (Eigen::Index t = 0; t < fy.rows(); ++t)
    for (int k = 0; k < 3; ++k) fy(t, k) = shuffle[fy(t, k)];
  const DistanceMatrix DY = distance_matrix(TriMesh(vy, fy));
  const Eigen::MatrixXd Pxy = permutation(shuffle);
  CHECK(isometric_loss(Pxy.transpose(), D.values, DY.values) < 1e-24);
  CHECK(cyclic_loss(Pxy, Pxy.transpose(), D.values) == 0.0);
  CHECK(coupling_loss(Pxy, Pxy.transpose()) == 0.0);

  PointMap gt;
  gt.assignments = shuffle;
  CHECK(supervised_loss(Pxy, DY.values, gt) == 0.0);
  const Eigen::MatrixXd uniformP = Eigen::MatrixXd::Constant(n, n, 1.0 / n);
  CHECK(supervised_loss(uniformP, Eigen::MatrixXd::Zero(n, n), gt) == 0.0);
}

TEST_CASE("losses match double-sum oracles") {
  SUBCASE("rectangular 5x4 instance") {
    const Eigen::MatrixXd P = column_stochastic(5, 4), Pt = column_stochastic(4, 5);
    const Eigen::MatrixXd DX = random_symmetric_distances(4), DY = random_symmetric_distances(5);
    CHECK(std::abs(cyclic_loss(P, Pt, DX) - cyclic_oracle(P, Pt, DX)) < 1e-10);
    CHECK(std::abs(isometric_loss(Pt, DX, DY) - isometric_oracle(Pt, DX, DY)) < 1e-10);
    CHECK(std::abs(coupling_loss(P, Pt) - coupling_oracle(P, Pt)) < 1e-10);
    PointMap gt;
    gt.assignments = {4, 0, 2, 2};
    CHECK(std::abs(supervised_loss(P, DY, gt) - supervised_oracle(P, DY, gt)) < 1e-10);
  }
  SUBCASE("twelve-vertex instances") {
    for (int trial = 0; trial < 3; ++trial) {
      const Eigen::MatrixXd P = column_stochastic(12, 12), Pt = column_stochastic(12, 12);
      const Eigen::MatrixXd DX = random_symmetric_distances(12), DY = random_symmetric_distances(12);
      PointMap gt;
      for (int i = 0; i < 12; ++i) gt.assignments.push_back(static_cast<int>(rng()() % 12));
      CHECK(std::abs(cyclic_loss(P, Pt, DX) - cyclic_oracle(P, Pt, DX)) < 1e-10);
      CHECK(std::abs(isometric_loss(Pt, DX, DY) - isometric_oracle(Pt, DX, DY)) < 1e-10);
      CHECK(std::abs(supervised_loss(P, DY, gt) - supervised_oracle(P, DY, gt)) < 1e-10);
      CHECK(std::abs(coupling_loss(P, Pt) - coupling_oracle(P, Pt)) < 1e-10);
    }
  }
  SUBCASE("uniform coupling closed form") {
    const Eigen::MatrixXd P = Eigen::MatrixXd::Constant(7, 5, 1.0 / 7), Pt = Eigen::MatrixXd::Constant(5, 7, 1.0 / 5);
    CHECK(coupling_loss(P, Pt) == doctest::Approx(5.0 * 4 / 5 + 7.0 * 6 / 7).epsilon(1e-12));
    CHECK(std::abs(coupling_loss(P, Pt) - coupling_oracle(P, Pt)) < 1e-10);
  }
  SUBCASE("uniform supervised") {
    const Eigen::MatrixXd P = Eigen::MatrixXd::Constant(6, 6, 1.0 / 6);
    const Eigen::MatrixXd DY = random_symmetric_distances(6);
    const PointMap gt = PointMap::identity(6);
    CHECK(supervised_loss(P, DY, gt) > 0.0);
    CHECK(std::abs(supervised_loss(P, DY, gt) - supervised_oracle(P, DY, gt)) < 1e-10);
  }
  CHECK_THROWS_AS(cyclic_loss(Eigen::MatrixXd::Ones(3, 4), Eigen::MatrixXd::Ones(4, 3), Eigen::MatrixXd::Ones(3, 3)),
                  UsageError);
}

TEST_CASE("cyclic loss is invariant to consistent source relabelling") {
  const Eigen::MatrixXd P = column_stochastic(6, 8), Pt = column_stochastic(8, 6);
  const Eigen::MatrixXd D = random_symmetric_distances(8);
  std::vector<int> perm(8);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng());
  const Eigen::MatrixXd Pp = P(Eigen::all, perm), Ptp = Pt(perm, Eigen::all), Dp = D(perm, perm);
  CHECK(cyclic_loss(Pp, Ptp, Dp) == doctest::Approx(cyclic_loss(P, Pt, D)).epsilon(1e-12));
}

TEST_CASE("sampled losses use the matching rows and columns") {
  const ShapeContext X = make_context(jittered_icosahedron(0.05, 3), 4, 2, 6, "X");
  const ShapeContext Y = make_context(jittered_icosahedron(0.05, 4), 4, 2, 6, "Y");
  const PairForward f = forward_pair(random_params(2, 6, 1, 0.5), X, Y);
  const std::vector<int> sx = {0, 3, 5, 9}, sy = {1, 2, 4, 6, 10};
  const DistanceMatrix dx = X.dist->restricted(sx);
  DistanceMatrix dy = Y.dist->restricted(sy);
  const PointMap gt = PointMap::identity(12);
  LossInputs in{&dx, &dy, nullptr};
  const LossBreakdown lb = evaluate_losses(f, in, {});
  CHECK(lb.cyclic == doctest::Approx(cyclic_oracle(f.P()(Eigen::all, sx), f.Pt()(sx, Eigen::all), dx.values)));
  CHECK(lb.isometric == doctest::Approx(isometric_oracle(f.Pt()(sx, sy), dx.values, dy.values)));
  CHECK(std::isnan(lb.supervised));
  in.gt = &gt;
  // Label 0 -> 0 is outside the target sample.
  CHECK_THROWS_AS(evaluate_losses(f, in, {}), DataError);
}

TEST_CASE("gradients match central finite differences") {
  const ShapeContext X = make_context(jittered_icosahedron(0.08, 5), 4, 2, 6, "X");
  const ShapeContext Y = make_context(jittered_icosahedron(0.08, 6), 4, 2, 6, "Y");
  const ModelParams p0 = random_params(2, 6, 1, 0.5);
  const PointMap gt = PointMap::identity(12);
  const LossInputs in{X.dist.get(), Y.dist.get(), &gt};

  auto check_weights = [&](const LossWeights& w) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p0.size()));
    backward(p0, X, Y, forward_pair(p0, X, Y), in, w, grad);
    auto loss = [&](const ModelParams& p) { return evaluate_losses(forward_pair(p, X, Y), in, w).total; };
    const double h = 1e-5;
    const double floor = 1e-3 * grad.cwiseAbs().maxCoeff();
    double worst = 0.0;
    std::size_t worst_i = 0;
    for (std::size_t i = 0; i < p0.size(); ++i) {
      ModelParams a = p0, b = p0;
      a.data(static_cast<Eigen::Index>(i)) += h;
      b.data(static_cast<Eigen::Index>(i)) -= h;
      const double fd = (loss(a) - loss(b)) / (2 * h);
      const double an = grad(static_cast<Eigen::Index>(i));
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
      if (rel > worst) worst = rel, worst_i = i;
    }
    CAPTURE(p0.tensor_name(worst_i));
    CHECK(worst < 1e-4);
    CHECK(grad.cwiseAbs().maxCoeff() > 0.0);
  };
  SUBCASE("cyclic") { check_weights({1, 0, 0, 0}); }
  SUBCASE("isometric") { check_weights({0, 1, 0, 0}); }
  SUBCASE("supervised") { check_weights({0, 0, 1, 0}); }
  SUBCASE("coupling") { check_weights({0, 0, 0, 1}); }
  SUBCASE("mixed") { check_weights({0.5, 0.25, 2, 0.1}); }
}

TEST_CASE("gradient linearity and zero configurations") {
  const ShapeContext X = make_context(jittered_icosahedron(0.05, 7), 4, 2, 6, "X");
  const ShapeContext Y = make_context(jittered_icosahedron(0.05, 8), 4, 2, 6, "Y");
  const ModelParams p = random_params(2, 6, 1, 0.5);
  const PairForward f = forward_pair(p, X, Y);
  const PointMap gt = PointMap::identity(12);
  const LossInputs in{X.dist.get(), Y.dist.get(), &gt};
  const auto n = static_cast<Eigen::Index>(p.size());

  Eigen::VectorXd g1 = Eigen::VectorXd::Zero(n), g2 = Eigen::VectorXd::Zero(n);
  backward(p, X, Y, f, in, {1, 0.5, 0.25, 0}, g1);
  backward(p, X, Y, f, in, {2, 1, 0.5, 0}, g2);
  CHECK(g2 == 2.0 * g1);

  DistanceMatrix zx = *X.dist, zy = *Y.dist;
  zx.values.setZero();
  zy.values.setZero();
  const LossInputs zero_in{&zx, &zy, &gt};
  const LossBreakdown lb = evaluate_losses(f, zero_in, {1, 1, 1, 0});
  CHECK(lb.total == 0.0);
  Eigen::VectorXd gz = Eigen::VectorXd::Zero(n);
  backward(p, X, Y, f, zero_in, {1, 1, 1, 0}, gz);
  CHECK(gz.isZero(0.0));

  DistanceMatrix huge = *X.dist;
  huge.values *= 1e300;
  const LossInputs bad{&huge, nullptr, nullptr};
  Eigen::VectorXd gb = Eigen::VectorXd::Zero(n);
  CHECK_THROWS_AS(backward(p, X, Y, f, bad, {1, 0, 0, 0}, gb), NumericalError);
  CHECK_THROWS_AS(backward(p, X, Y, f, LossInputs{}, {1, 0, 0, 0}, gb), UsageError);
}

TEST_CASE("ground truth from labels") {
  ShapeContext a, b;
  a.labels = {5, 6, 7};
  b.labels = {7, 5, 6, 9};
  const auto gt = ground_truth_from_labels(a, b);
  REQUIRE(gt.has_value());
  CHECK(gt->assignments == std::vector<int>{1, 2, 0});
  b.labels = {7, 5};
  CHECK_FALSE(ground_truth_from_labels(a, b).has_value());
}
