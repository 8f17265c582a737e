#pragma once

#include <cstddef>

// Dense inner loops behind the differentiable ops. Every kernel exists twice:
// `serial` is the plain reference loop nest kept for testing, `parallel`
// splits output rows across OpenMP threads and vectorizes the inner loop.
// Each output element is produced by exactly one thread with a fixed
// summation order, so the parallel result never depends on thread count.
//
// All matrices are dense row-major. The gemm kernels accumulate into C.

namespace dualpf::kernels {

namespace serial {

// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

void softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y);
// dx += y * (dy - <y, dy>) per row
void softmax_rows_backward(std::size_t rows, std::size_t cols, const double* y, const double* dy, double* dx);

// s[t,j,:] = sum_i c[t,i,j] * u[i,j,:]
void routing_pool(std::size_t steps, std::size_t lows, std::size_t highs, std::size_t dim, const double* c,
                  const double* u, double* s);

// a[t,i,j] = sum_h w[h] * tanh(zp[t,h] + up[i,j,h] + op[t,j,h]); when `act` is
// non-null the tanh values are stored there as [t,i,j,h].
void guided_agreement(std::size_t steps, std::size_t lows, std::size_t highs, std::size_t hidden, const double* zp,
                      const double* up, const double* op, const double* w, double* a, double* act);

}  // namespace serial

namespace parallel {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

void softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y);
void softmax_rows_backward(std::size_t rows, std::size_t cols, const double* y, const double* dy, double* dx);

void routing_pool(std::size_t steps, std::size_t lows, std::size_t highs, std::size_t dim, const double* c,
                  const double* u, double* s);

void guided_agreement(std::size_t steps, std::size_t lows, std::size_t highs, std::size_t hidden, const double* zp,
                      const double* up, const double* op, const double* w, double* a, double* act);

}  // namespace parallel

// Minimum number of multiply-adds before a kernel opens a parallel region.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

}  // namespace dualpf::kernels
