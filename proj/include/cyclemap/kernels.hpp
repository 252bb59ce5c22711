#pragma once

// Elementwise and reduction kernels on the hot paths of the correspondence
// pipeline. Every kernel has a portable scalar reference and, where the host
// supports it, an AVX2+FMA variant. The active table is picked once at
// startup from CPUID; CYCLEMAP_SIMD=scalar forces the reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace cyclemap::kernels {

struct KernelTable {
  std::string_view name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // sum_i (a_i - b_i)^2
  double (*sum_sq_diff)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out = |in| / sum|in|; returns sum|in|. When the sum is zero, out is 1/n.
  double (*abs_normalize)(const double* in, double* out, std::size_t n);
  // Backward of abs_normalize for one column:
  //   g_in_i = sign(in_i) * (g_out_i - <g_out, out>) / sum
  // with sign(0) = 0 and g_in = 0 when sum == 0.
  void (*abs_normalize_backward)(const double* in, const double* out, const double* g_out,
                                 double sum, double* g_in, std::size_t n);
  // x = max(x, 0)
  void (*relu)(double* x, std::size_t n);
  // g *= (pre > 0)
  void (*relu_backward)(const double* pre, double* g, std::size_t n);
  // dist_i = min(dist_i, cand_i)
  void (*min_update)(double* dist, const double* cand, std::size_t n);
  // argmax with ties going to the smallest index; n > 0
  std::size_t (*argmax)(const double* x, std::size_t n);
  // x *= alpha
  void (*scale)(double alpha, double* x, std::size_t n);
};

const KernelTable& scalar_table();
// nullptr when the build or the host lacks AVX2/FMA.
const KernelTable* avx2_table();

// The table chosen for this process.
const KernelTable& active();

// Span conveniences over the active table.
inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline double sum_sq_diff(std::span<const double> a, std::span<const double> b) {
  return active().sum_sq_diff(a.data(), b.data(), a.size());
}

}  // namespace cyclemap::kernels
