#include "backends.hpp"

#include <algorithm>
#include <cmath>

// Scalar reference kernels. These define the numeric contract the SIMD
// variants are tested against: reductions run left to right in 64-bit floats,
// elementwise ops round once per element.

namespace ticl::kern::ref {

namespace {

inline double at(const float* a, int64_t lda, bool trans, int64_t row, int64_t col) {
    return static_cast<double>(trans ? a[col * lda + row] : a[row * lda + col]);
}

} // namespace

void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
          const float* a, int64_t lda, const float* b, int64_t ldb,
          float beta, float* c, int64_t ldc) {
    const double alpha_d = alpha;
    const double beta_d = beta;
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) {
                acc += at(a, lda, ta, i, p) * at(b, ldb, tb, p, j);
            }
            double out = alpha_d * acc;
            if (beta != 0.0f) out += beta_d * static_cast<double>(c[i * ldc + j]);
            c[i * ldc + j] = static_cast<float>(out);
        }
    }
}

void axpy(int64_t n, float a, const float* x, float* y) {
    for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void vadd(int64_t n, const float* a, const float* b, float* out) {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void vsub(int64_t n, const float* a, const float* b, float* out) {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void vmul(int64_t n, const float* a, const float* b, float* out) {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void vscale(int64_t n, float a, const float* x, float* out) {
    for (int64_t i = 0; i < n; ++i) out[i] = a * x[i];
}

double vsum(int64_t n, const float* x) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]);
    return acc;
}

double vdot(int64_t n, const float* x, const float* y) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        acc += static_cast<double>(x[i]) * static_cast<double>(y[i]);
    }
    return acc;
}

float vmax(int64_t n, const float* x) {
    float m = x[0];
    for (int64_t i = 1; i < n; ++i) m = std::max(m, x[i]);
    return m;
}

bool all_finite(int64_t n, const float* x) {
    for (int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(x[i])) return false;
    }
    return true;
}

} // namespace ticl::kern::ref
