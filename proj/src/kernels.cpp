#include "cafe/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cafe::kernels {

namespace {

constexpr double kMaskedLogit = -1e9;
constexpr std::size_t kParallelWork = 1 << 15;

inline double elem_a(const GemmArgs& g, std::size_t i, std::size_t p) {
  return g.trans_a == Trans::No ? g.a[i * g.k + p] : g.a[p * g.m + i];
}

// One output row of C. Shared by both variants so that the accumulation order
// is identical.
inline void gemm_row(const GemmArgs& g, std::size_t i) {
  double* crow = g.c + i * g.n;
  if (!g.accumulate) std::fill(crow, crow + g.n, 0.0);
  if (g.trans_b == Trans::No) {
    for (std::size_t p = 0; p < g.k; ++p) {
      const double aip = elem_a(g, i, p);
      if (aip == 0.0) continue;
      const double* brow = g.b + p * g.n;
      for (std::size_t j = 0; j < g.n; ++j) crow[j] += aip * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < g.n; ++j) {
      const double* brow = g.b + j * g.k;
      double acc = 0.0;
      for (std::size_t p = 0; p < g.k; ++p) acc += elem_a(g, i, p) * brow[p];
      crow[j] += acc;
    }
  }
}

inline void fm_forward_row(const FmForwardArgs& a, std::size_t t) {
  const double* x = a.x + t * a.n;
  double* s = a.sums + t * a.factors;
  std::fill(s, s + a.factors, 0.0);
  double linear = 0.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < a.n; ++i) {
    const double xi = x[i];
    linear += a.w[i] * xi;
    const double* vi = a.v + i * a.factors;
    for (std::size_t f = 0; f < a.factors; ++f) {
      s[f] += vi[f] * xi;
      sq += vi[f] * vi[f] * xi * xi;
    }
  }
  double ss = 0.0;
  for (std::size_t f = 0; f < a.factors; ++f) ss += s[f] * s[f];
  a.out[t] = a.w0 + linear + 0.5 * (ss - sq);
}

// dZ/dx_i = w_i + sum_f v_if s_f - x_i sum_f v_if^2
inline void fm_backward_dx_row(const FmBackwardArgs& a, std::size_t t) {
  const double gt = a.g[t];
  if (gt == 0.0) return;
  const double* x = a.x + t * a.n;
  const double* s = a.sums + t * a.factors;
  double* dx = a.dx + t * a.n;
  for (std::size_t i = 0; i < a.n; ++i) {
    const double* vi = a.v + i * a.factors;
    double vs = 0.0, vv = 0.0;
    for (std::size_t f = 0; f < a.factors; ++f) {
      vs += vi[f] * s[f];
      vv += vi[f] * vi[f];
    }
    dx[i] += gt * (a.w[i] + vs - x[i] * vv);
  }
}

// dZ/dw_i = x_i ; dZ/dv_if = x_i s_f - v_if x_i^2, summed over rows in order.
inline void fm_backward_param_row(const FmBackwardArgs& a, std::size_t i) {
  const double* vi = a.v + i * a.factors;
  double* dvi = a.dv ? a.dv + i * a.factors : nullptr;
  double dwi = 0.0;
  for (std::size_t t = 0; t < a.rows; ++t) {
    const double gt = a.g[t];
    const double xi = a.x[t * a.n + i];
    dwi += gt * xi;
    if (dvi) {
      const double* s = a.sums + t * a.factors;
      for (std::size_t f = 0; f < a.factors; ++f) dvi[f] += gt * (xi * s[f] - vi[f] * xi * xi);
    }
  }
  if (a.dw) a.dw[i] += dwi;
}

inline void fm_backward_bias(const FmBackwardArgs& a) {
  if (!a.dw0) return;
  double acc = 0.0;
  for (std::size_t t = 0; t < a.rows; ++t) acc += a.g[t];
  *a.dw0 += acc;
}

inline void masked_softmax_row(const MaskedSoftmaxArgs& a, std::size_t r) {
  const double* x = a.x + r * a.cols;
  double* y = a.out + r * a.cols;
  double mx = -INFINITY;
  for (std::size_t c = 0; c < a.cols; ++c) {
    y[c] = a.mask[c] != 0.0 ? x[c] : x[c] + kMaskedLogit;
    mx = std::max(mx, y[c]);
  }
  double z = 0.0;
  for (std::size_t c = 0; c < a.cols; ++c) {
    y[c] = a.mask[c] != 0.0 ? std::exp(y[c] - mx) : 0.0;
    z += y[c];
  }
  for (std::size_t c = 0; c < a.cols; ++c) y[c] /= z;
}

void check_mask(const MaskedSoftmaxArgs& a) {
  for (std::size_t c = 0; c < a.cols; ++c)
    if (a.mask[c] != 0.0) return;
  throw std::invalid_argument("masked softmax: every position of the row is masked");
}

}  // namespace

namespace serial {

void gemm(const GemmArgs& args) {
  for (std::size_t i = 0; i < args.m; ++i) gemm_row(args, i);
}

void fm_forward(const FmForwardArgs& args) {
  for (std::size_t t = 0; t < args.rows; ++t) fm_forward_row(args, t);
}

void fm_backward(const FmBackwardArgs& args) {
  if (args.dx)
    for (std::size_t t = 0; t < args.rows; ++t) fm_backward_dx_row(args, t);
  if (args.dw || args.dv)
    for (std::size_t i = 0; i < args.n; ++i) fm_backward_param_row(args, i);
  fm_backward_bias(args);
}

void masked_softmax(const MaskedSoftmaxArgs& args) {
  check_mask(args);
  for (std::size_t r = 0; r < args.rows; ++r) masked_softmax_row(args, r);
}

}  // namespace serial

namespace parallel {

void gemm(const GemmArgs& args) {
  const auto m = static_cast<std::ptrdiff_t>(args.m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < m; ++i) gemm_row(args, static_cast<std::size_t>(i));
}

void fm_forward(const FmForwardArgs& args) {
  const auto rows = static_cast<std::ptrdiff_t>(args.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t t = 0; t < rows; ++t) fm_forward_row(args, static_cast<std::size_t>(t));
}

void fm_backward(const FmBackwardArgs& args) {
  const auto rows = static_cast<std::ptrdiff_t>(args.rows);
  const auto n = static_cast<std::ptrdiff_t>(args.n);
  if (args.dx) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t t = 0; t < rows; ++t) fm_backward_dx_row(args, static_cast<std::size_t>(t));
  }
  if (args.dw || args.dv) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) fm_backward_param_row(args, static_cast<std::size_t>(i));
  }
  fm_backward_bias(args);
}

void masked_softmax(const MaskedSoftmaxArgs& args) {
  check_mask(args);
  const auto rows = static_cast<std::ptrdiff_t>(args.rows);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < rows; ++r) masked_softmax_row(args, static_cast<std::size_t>(r));
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

static bool worth_forking(std::size_t work) {
#ifdef _OPENMP
  // Nested regions (per-example workers already running) stay serial.
  return work >= kParallelWork && !omp_in_parallel() && omp_get_max_threads() > 1;
#else
  (void)work;
  return false;
#endif
}

void gemm(const GemmArgs& args) {
  if (worth_forking(args.m * args.n * args.k))
    parallel::gemm(args);
  else
    serial::gemm(args);
}

void fm_forward(const FmForwardArgs& args) {
  if (worth_forking(args.rows * args.n * args.factors))
    parallel::fm_forward(args);
  else
    serial::fm_forward(args);
}

void fm_backward(const FmBackwardArgs& args) {
  if (worth_forking(args.rows * args.n * args.factors))
    parallel::fm_backward(args);
  else
    serial::fm_backward(args);
}

void masked_softmax(const MaskedSoftmaxArgs& args) {
  if (worth_forking(args.rows * args.cols * 8))
    parallel::masked_softmax(args);
  else
    serial::masked_softmax(args);
}

double fm_bruteforce(std::span<const double> x, double w0, std::span<const double> w,
                     std::span<const double> v, std::size_t factors) {
  const std::size_t n = x.size();
  if (w.size() != n || v.size() != n * factors)
    throw std::invalid_argument("fm_bruteforce: parameter sizes do not match input arity");
  double z = w0;
  for (std::size_t i = 0; i < n; ++i) z += w[i] * x[i];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t f = 0; f < factors; ++f) dot += v[i * factors + f] * v[j * factors + f];
      z += dot * x[i] * x[j];
    }
  return z;
}

}  // namespace cafe::kernels
