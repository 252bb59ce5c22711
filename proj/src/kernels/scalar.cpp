#include "cyclemap/kernels.hpp"

#include <cmath>

namespace cyclemap::kernels {
namespace {

double dot_ref(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sum_sq_diff_ref(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void axpy_ref(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double abs_normalize_ref(const double* in, double* out, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::abs(in[i]);
  if (sum == 0.0) {
    const double u = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = u;
    return sum;
  }
  const double inv = 1.0 / sum;
  for (std::size_t i = 0; i < n; ++i) out[i] = std::abs(in[i]) * inv;
  return sum;
}

void abs_normalize_backward_ref(const double* in, const double* out, const double* g_out,
                                double sum, double* g_in, std::size_t n) {
  if (sum == 0.0) {
    for (std::size_t i = 0; i < n; ++i) g_in[i] = 0.0;
    return;
  }
  double proj = 0.0;
  for (std::size_t i = 0; i < n; ++i) proj += g_out[i] * out[i];
  const double inv = 1.0 / sum;
  for (std::size_t i = 0; i < n; ++i) {
    const double sgn = in[i] > 0.0 ? 1.0 : (in[i] < 0.0 ? -1.0 : 0.0);
    g_in[i] = sgn * (g_out[i] - proj) * inv;
  }
}

void relu_ref(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_ref(const double* pre, double* g, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!(pre[i] > 0.0)) g[i] = 0.0;
}

void min_update_ref(double* dist, const double* cand, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (cand[i] < dist[i]) dist[i] = cand[i];
}

std::size_t argmax_ref(const double* x, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (x[i] > x[best]) best = i;
  return best;
}

void scale_ref(double alpha, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{
      "scalar",          dot_ref,        sum_sq_diff_ref, axpy_ref,   abs_normalize_ref,
      abs_normalize_backward_ref, relu_ref, relu_backward_ref, min_update_ref, argmax_ref,
      scale_ref,
  };
  return table;
}

}  // namespace cyclemap::kernels
