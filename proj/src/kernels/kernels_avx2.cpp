#include "backends.hpp"

#if defined(TICL_HAVE_AVX2)

#include <immintrin.h>

#include <algorithm>
#include <cmath>

// AVX2 + FMA variants. Reductions keep 64-bit accumulators (two __m256d
// lanes per 8-float block) and combine lanes in a fixed order, so results are
// deterministic; they may differ from the scalar backend by reassociation
// only, which the equivalence tests bound.

namespace ticl::kern::avx2 {

namespace {

inline void cvt8(const float* p, __m256d& lo, __m256d& hi) {
    const __m256 v = _mm256_loadu_ps(p);
    lo = _mm256_cvtps_pd(_mm256_castps256_ps128(v));
    hi = _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1));
}

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s2 = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(s2) + _mm_cvtsd_f64(_mm_unpackhi_pd(s2, s2));
}

// C[i, j:j+8] for one output row, A addressed through a row stride so the
// nn (stride 1) and tn (stride lda) cases share the loop.
inline void gemm_row_block8(int64_t k, float alpha, float beta,
                            const float* a_row, int64_t a_step,
                            const float* b, int64_t ldb, float* c_out) {
    __m256d acc_lo = _mm256_setzero_pd();
    __m256d acc_hi = _mm256_setzero_pd();
    for (int64_t p = 0; p < k; ++p) {
        const __m256d av = _mm256_set1_pd(static_cast<double>(a_row[p * a_step]));
        __m256d b_lo, b_hi;
        cvt8(b + p * ldb, b_lo, b_hi);
        acc_lo = _mm256_fmadd_pd(av, b_lo, acc_lo);
        acc_hi = _mm256_fmadd_pd(av, b_hi, acc_hi);
    }
    const __m256d alpha_v = _mm256_set1_pd(static_cast<double>(alpha));
    __m256d out_lo = _mm256_mul_pd(alpha_v, acc_lo);
    __m256d out_hi = _mm256_mul_pd(alpha_v, acc_hi);
    if (beta != 0.0f) {
        const __m256d beta_v = _mm256_set1_pd(static_cast<double>(beta));
        __m256d c_lo, c_hi;
        cvt8(c_out, c_lo, c_hi);
        out_lo = _mm256_fmadd_pd(beta_v, c_lo, out_lo);
        out_hi = _mm256_fmadd_pd(beta_v, c_hi, out_hi);
    }
    const __m128 f_lo = _mm256_cvtpd_ps(out_lo);
    const __m128 f_hi = _mm256_cvtpd_ps(out_hi);
    _mm256_storeu_ps(c_out, _mm256_set_m128(f_hi, f_lo));
}

inline double dot_rows(int64_t k, const float* x, const float* y) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    int64_t p = 0;
    for (; p + 8 <= k; p += 8) {
        __m256d x_lo, x_hi, y_lo, y_hi;
        cvt8(x + p, x_lo, x_hi);
        cvt8(y + p, y_lo, y_hi);
        acc0 = _mm256_fmadd_pd(x_lo, y_lo, acc0);
        acc1 = _mm256_fmadd_pd(x_hi, y_hi, acc1);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; p < k; ++p) {
        acc += static_cast<double>(x[p]) * static_cast<double>(y[p]);
    }
    return acc;
}

inline double a_at(const float* a, int64_t lda, bool trans, int64_t row, int64_t col) {
    return static_cast<double>(trans ? a[col * lda + row] : a[row * lda + col]);
}

} // namespace

void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
          const float* a, int64_t lda, const float* b, int64_t ldb,
          float beta, float* c, int64_t ldc) {
    if (!tb) {
        // nn / tn: vectorize across output columns.
        for (int64_t i = 0; i < m; ++i) {
            const float* a_row = ta ? a + i : a + i * lda;
            const int64_t a_step = ta ? lda : 1;
            int64_t j = 0;
            for (; j + 8 <= n; j += 8) {
                gemm_row_block8(k, alpha, beta, a_row, a_step, b + j, ldb, c + i * ldc + j);
            }
            for (; j < n; ++j) {
                double acc = 0.0;
                for (int64_t p = 0; p < k; ++p) {
                    acc += static_cast<double>(a_row[p * a_step]) *
                           static_cast<double>(b[p * ldb + j]);
                }
                double out = static_cast<double>(alpha) * acc;
                if (beta != 0.0f) out += static_cast<double>(beta) * static_cast<double>(c[i * ldc + j]);
                c[i * ldc + j] = static_cast<float>(out);
            }
        }
    } else if (!ta) {
        // nt: rows of A against rows of B, both contiguous.
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                double out = static_cast<double>(alpha) * dot_rows(k, a + i * lda, b + j * ldb);
                if (beta != 0.0f) out += static_cast<double>(beta) * static_cast<double>(c[i * ldc + j]);
                c[i * ldc + j] = static_cast<float>(out);
            }
        }
    } else {
        // tt: both operands strided; cold path, plain loop.
        for (int64_t i = 0; i < m; ++i) {
            for (int64_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int64_t p = 0; p < k; ++p) {
                    acc += a_at(a, lda, true, i, p) * a_at(b, ldb, true, p, j);
                }
                double out = static_cast<double>(alpha) * acc;
                if (beta != 0.0f) out += static_cast<double>(beta) * static_cast<double>(c[i * ldc + j]);
                c[i * ldc + j] = static_cast<float>(out);
            }
        }
    }
}

void axpy(int64_t n, float a, const float* x, float* y) {
    const __m256 av = _mm256_set1_ps(a);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 xv = _mm256_loadu_ps(x + i);
        const __m256 yv = _mm256_loadu_ps(y + i);
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, xv, yv));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void vadd(int64_t n, const float* a, const float* b, float* out) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void vsub(int64_t n, const float* a, const float* b, float* out) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void vmul(int64_t n, const float* a, const float* b, float* out) {
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void vscale(int64_t n, float a, const float* x, float* out) {
    const __m256 av = _mm256_set1_ps(a);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(out + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
    }
    for (; i < n; ++i) out[i] = a * x[i];
}

double vsum(int64_t n, const float* x) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256d lo, hi;
        cvt8(x + i, lo, hi);
        acc0 = _mm256_add_pd(acc0, lo);
        acc1 = _mm256_add_pd(acc1, hi);
    }
    double acc = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += static_cast<double>(x[i]);
    return acc;
}

double vdot(int64_t n, const float* x, const float* y) {
    return dot_rows(n, x, y);
}

float vmax(int64_t n, const float* x) {
    if (n < 8) {
        float m = x[0];
        for (int64_t i = 1; i < n; ++i) m = std::max(m, x[i]);
        return m;
    }
    __m256 mv = _mm256_loadu_ps(x);
    int64_t i = 8;
    for (; i + 8 <= n; i += 8) {
        mv = _mm256_max_ps(mv, _mm256_loadu_ps(x + i));
    }
    alignas(32) float lanes[8];
    _mm256_store_ps(lanes, mv);
    float m = lanes[0];
    for (int j = 1; j < 8; ++j) m = std::max(m, lanes[j]);
    for (; i < n; ++i) m = std::max(m, x[i]);
    return m;
}

bool all_finite(int64_t n, const float* x) {
    const __m256i exp_mask = _mm256_set1_epi32(0x7f800000);
    int64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256i bits = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(x + i));
        const __m256i exp = _mm256_and_si256(bits, exp_mask);
        const __m256i bad = _mm256_cmpeq_epi32(exp, exp_mask);
        if (_mm256_movemask_epi8(bad) != 0) return false;
    }
    for (; i < n; ++i) {
        if (!std::isfinite(x[i])) return false;
    }
    return true;
}

} // namespace ticl::kern::avx2

#endif // TICL_HAVE_AVX2
