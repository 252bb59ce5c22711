#include <cmath>
#include <random>
#include <vector>

#include "cyclemap/kernels.hpp"
#include "doctest.h"

using namespace cyclemap::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, unsigned seed, double zero_fraction = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng) < zero_fraction ? 0.0 : g(rng);
  return v;
}

// Odd lengths exercise the scalar tails of the vector loops.
const std::size_t kLengths[] = {1, 3, 4, 7, 8, 13, 64, 257};

}  // namespace

TEST_CASE("scalar kernels agree with plain loops") {
  const auto& s = scalar_table();
  const auto a = random_vec(9, 1), b = random_vec(9, 2);
  double d = 0.0, q = 0.0;
  for (int i = 0; i < 9; ++i) d += a[i] * b[i], q += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(s.dot(a.data(), b.data(), 9) == doctest::Approx(d).epsilon(1e-14));
  CHECK(s.sum_sq_diff(a.data(), b.data(), 9) == doctest::Approx(q).epsilon(1e-14));

  std::vector<double> zero(5, 0.0), out(5);
  CHECK(s.abs_normalize(zero.data(), out.data(), 5) == 0.0);
  for (double x : out) CHECK(x == 0.2);

  const double ties[] = {1.0, 3.0, 3.0, -1.0};
  CHECK(s.argmax(ties, 4) == 1);
}

TEST_CASE("abs_normalize backward matches finite differences") {
  const auto& s = scalar_table();
  const std::size_t n = 6;
  auto in = random_vec(n, 3);
  const auto w = random_vec(n, 4);
  auto f = [&](const std::vector<double>& x) {
    std::vector<double> o(n);
    s.abs_normalize(x.data(), o.data(), n);
    return s.dot(o.data(), w.data(), n);
  };
  std::vector<double> out(n), g(n);
  const double sum = s.abs_normalize(in.data(), out.data(), n);
  s.abs_normalize_backward(in.data(), out.data(), w.data(), sum, g.data(), n);
  for (std::size_t i = 0; i < n; ++i) {
    auto p = in, m = in;
    p[i] += 1e-6;
    m[i] -= 1e-6;
    CHECK(g[i] == doctest::Approx((f(p) - f(m)) / 2e-6).epsilon(1e-6));
  }
}

TEST_CASE("avx2 kernels are equivalent to the scalar reference") {
  const KernelTable* v = avx2_table();
  if (!v) {
    MESSAGE("AVX2 unavailable on this host; equivalence not exercised");
    return;
  }
  const auto& s = scalar_table();
  for (std::size_t n : kLengths) {
    CAPTURE(n);
    const auto a = random_vec(n, 10 + n, 0.2), b = random_vec(n, 20 + n);
    const double tol = 1e-13 * static_cast<double>(n);
    CHECK(std::abs(v->dot(a.data(), b.data(), n) - s.dot(a.data(), b.data(), n)) <= tol);
    CHECK(std::abs(v->sum_sq_diff(a.data(), b.data(), n) - s.sum_sq_diff(a.data(), b.data(), n)) <= tol * 4);

    auto y1 = b, y2 = b;
    s.axpy(0.37, a.data(), y1.data(), n);
    v->axpy(0.37, a.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y1[i] - y2[i]) <= 1e-15);

    std::vector<double> o1(n), o2(n), g1(n), g2(n);
    const double s1 = s.abs_normalize(a.data(), o1.data(), n);
    const double s2 = v->abs_normalize(a.data(), o2.data(), n);
    CHECK(std::abs(s1 - s2) <= tol);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(o1[i] - o2[i]) <= 1e-14);
    s.abs_normalize_backward(a.data(), o1.data(), b.data(), s1, g1.data(), n);
    v->abs_normalize_backward(a.data(), o1.data(), b.data(), s1, g2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(g1[i] - g2[i]) <= 1e-12);

    auto r1 = a, r2 = a;
    s.relu(r1.data(), n);
    v->relu(r2.data(), n);
    CHECK(r1 == r2);
    auto gb1 = b, gb2 = b;
    s.relu_backward(a.data(), gb1.data(), n);
    v->relu_backward(a.data(), gb2.data(), n);
    CHECK(gb1 == gb2);

    auto m1 = a, m2 = a;
    s.min_update(m1.data(), b.data(), n);
    v->min_update(m2.data(), b.data(), n);
    CHECK(m1 == m2);

    CHECK(s.argmax(a.data(), n) == v->argmax(a.data(), n));
    std::vector<double> flat(n, 2.0);
    CHECK(v->argmax(flat.data(), n) == 0);

    auto c1 = a, c2 = a;
    s.scale(-1.5, c1.data(), n);
    v->scale(-1.5, c2.data(), n);
    CHECK(c1 == c2);
  }
}

TEST_CASE("argmax tie-break survives vector lanes") {
  const KernelTable* v = avx2_table();
  if (!v) return;
  std::vector<double> x(37, 0.0);
  x[5] = x[6] = x[30] = 4.0;
  CHECK(v->argmax(x.data(), x.size()) == 5);
  x[2] = 4.0;
  CHECK(v->argmax(x.data(), x.size()) == 2);
}
