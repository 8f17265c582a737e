#include "dualpf/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace dualpf::kernels {

namespace serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] += acc;
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] += acc;
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] += acc;
    }
}

void softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * cols;
    double* yr = y + r * cols;
    double mx = -INFINITY;
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= sum;
  }
}

void softmax_rows_backward(std::size_t rows, std::size_t cols, const double* y, const double* dy, double* dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < cols; ++c) dot += y[r * cols + c] * dy[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += y[r * cols + c] * (dy[r * cols + c] - dot);
  }
}

void routing_pool(std::size_t steps, std::size_t lows, std::size_t highs, std::size_t dim, const double* c,
                  const double* u, double* s) {
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t j = 0; j < highs; ++j)
      for (std::size_t d = 0; d < dim; ++d) {
        double acc = 0.0;
        for (std::size_t i = 0; i < lows; ++i) acc += c[(t * lows + i) * highs + j] * u[(i * highs + j) * dim + d];
        s[(t * highs + j) * dim + d] = acc;
      }
}

void guided_agreement(std::size_t steps, std::size_t lows, std::size_t highs, std::size_t hidden, const double* zp,
                      const double* up, const double* op, const double* w, double* a, double* act) {
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < lows; ++i)
      for (std::size_t j = 0; j < highs; ++j) {
        double acc = 0.0;
        for (std::size_t h = 0; h < hidden; ++h) {
          const double v = std::tanh(zp[t * hidden + h] + up[(i * highs + j) * hidden + h] + op[(t * highs + j) * hidden + h]);
          if (act) act[((t * lows + i) * highs + j) * hidden + h] = v;
          acc += w[h] * v;
        }
        a[(t * lows + i) * highs + j] = acc;
      }
}

}  // namespace serial

namespace parallel {

namespace {
inline bool worth_it(std::size_t work) { return work >= kParallelThreshold; }
}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
#pragma omp parallel for schedule(static) if (worth_it(m * n * k))
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    double* cr = c + i * n;
    const double* ar = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* br = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
#pragma omp parallel for schedule(static) if (worth_it(m * n * k))
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    const double* ar = a + i * k;
    double* cr = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b + j * k;
      double acc = 0.0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
      cr[j] += acc;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
#pragma omp parallel for schedule(static) if (worth_it(m * n * k))
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    double* cr = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      const double* br = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

void softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y) {
#pragma omp parallel for schedule(static) if (worth_it(rows * cols * 16))
  for (std::int64_t r = 0; r < static_cast<std::int64_t>(rows); ++r) {
    const double* xr = x + r * cols;
    double* yr = y + r * cols;
    double mx = -INFINITY;
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    const double inv = 1.0 / sum;
    for (std::size_t c = 0; c < cols; ++c) yr[c] *= inv;
  }
}

void softmax_rows_backward(std::size_t rows, std::size_t cols, const double* y, const double* dy, double* dx) {
#pragma omp parallel for schedule(static) if (worth_it(rows * cols * 4))
  for (std::int64_t r = 0; r < static_cast<std::int64_t>(rows); ++r) {
    const double* yr = y + r * cols;
    const double* dyr = dy + r * cols;
    double* dxr = dx + r * cols;
    double dot = 0.0;
#pragma omp simd reduction(+ : dot)
    for (std::size_t c = 0; c < cols; ++c) dot += yr[c] * dyr[c];
#pragma omp simd
    for (std::size_t c = 0; c < cols; ++c) dxr[c] += yr[c] * (dyr[c] - dot);
  }
}

void routing_pool(std::size_t steps, std::size_t lows, std::size_t highs, std::size_t dim, const double* c,
                  const double* u, double* s) {
#pragma omp parallel for schedule(static) if (worth_it(steps * lows * highs * dim))
  for (std::int64_t t = 0; t < static_cast<std::int64_t>(steps); ++t) {
    double* st = s + t * highs * dim;
    std::fill(st, st + highs * dim, 0.0);
    for (std::size_t i = 0; i < lows; ++i) {
      const double* ct = c + (t * lows + i) * highs;
      const double* ui = u + i * highs * dim;
      for (std::size_t j = 0; j < highs; ++j) {
        const double w = ct[j];
        const double* uij = ui + j * dim;
        double* sj = st + j * dim;
#pragma omp simd
        for (std::size_t d = 0; d < dim; ++d) sj[d] += w * uij[d];
      }
    }
  }
}

void guided_agreement(std::size_t steps, std::size_t lows, std::size_t highs, std::size_t hidden, const double* zp,
                      const double* up, const double* op, const double* w, double* a, double* act) {
#pragma omp parallel for schedule(static) if (worth_it(steps * lows * highs * hidden * 8))
  for (std::int64_t t = 0; t < static_cast<std::int64_t>(steps); ++t) {
    const double* zt = zp + t * hidden;
    for (std::size_t i = 0; i < lows; ++i)
      for (std::size_t j = 0; j < highs; ++j) {
        const double* uij = up + (i * highs + j) * hidden;
        const double* otj = op + (t * highs + j) * hidden;
        double* out = act ? act + ((t * lows + i) * highs + j) * hidden : nullptr;
        double acc = 0.0;
        for (std::size_t h = 0; h < hidden; ++h) {
          const double v = std::tanh(zt[h] + uij[h] + otj[h]);
          if (out) out[h] = v;
          acc += w[h] * v;
        }
        a[(t * lows + i) * highs + j] = acc;
      }
  }
}

}  // namespace parallel

}  // namespace dualpf::kernels
