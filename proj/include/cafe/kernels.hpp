#pragma once

// Hot loops behind the tape primitives. Every kernel has a serial reference
// in `serial::` and an OpenMP version in `parallel::`. The parallel versions
// split work over independent output rows (or parameter rows) and keep the
// per-element summation order of the serial code, so both produce bitwise
// identical results for any thread count.

#include <cstddef>
#include <span>

namespace cafe::kernels {

enum class Trans { No, Yes };

// Row-major GEMM: C (m x n) (+)= op(A) (m x k) * op(B) (k x n).
struct GemmArgs {
  std::size_t m, n, k;
  const double* a;
  Trans trans_a;
  const double* b;
  Trans trans_b;
  double* c;
  bool accumulate;
};

// Linear-time factorization-machine scores for a batch of input rows.
//   out[t]      = w0 + <w, x_t> + 0.5 * sum_f (s_tf^2 - sum_i v_if^2 x_ti^2)
//   sums[t, f]  = s_tf = sum_i v_if x_ti     (kept for the backward pass)
struct FmForwardArgs {
  std::size_t rows, n, factors;
  const double* x;   // rows x n
  double w0;
  const double* w;   // n
  const double* v;   // n x factors
  double* out;       // rows
  double* sums;      // rows x factors
};

// Gradients of sum_t g_t * Z(x_t) w.r.t. inputs and FM parameters, accumulated.
struct FmBackwardArgs {
  std::size_t rows, n, factors;
  const double* x;
  const double* w;
  const double* v;
  const double* sums;
  const double* g;   // rows
  double* dx;        // rows x n, may be null
  double* dw0;       // may be null
  double* dw;        // n, may be null
  double* dv;        // n x factors, may be null
};

// Row-wise softmax over `cols` with a 0/1 column mask (shared by all rows).
// Masked entries get exactly zero weight. Requires at least one unmasked column.
struct MaskedSoftmaxArgs {
  std::size_t rows, cols;
  const double* x;
  const double* mask;  // cols
  double* out;
};

namespace serial {
void gemm(const GemmArgs& args);
void fm_forward(const FmForwardArgs& args);
void fm_backward(const FmBackwardArgs& args);
void masked_softmax(const MaskedSoftmaxArgs& args);
}  // namespace serial

namespace parallel {
void gemm(const GemmArgs& args);
void fm_forward(const FmForwardArgs& args);
void fm_backward(const FmBackwardArgs& args);
void masked_softmax(const MaskedSoftmaxArgs& args);
}  // namespace parallel

// Picks the parallel path once the work is large enough to amortize a fork.
void gemm(const GemmArgs& args);
void fm_forward(const FmForwardArgs& args);
void fm_backward(const FmBackwardArgs& args);
void masked_softmax(const MaskedSoftmaxArgs& args);

// O(n^2) pairwise FM evaluation for a single input, used by `fmcheck`.
// The model never calls it.
double fm_bruteforce(std::span<const double> x, double w0, std::span<const double> w,
                     std::span<const double> v, std::size_t factors);

int max_threads();

}  // namespace cafe::kernels
