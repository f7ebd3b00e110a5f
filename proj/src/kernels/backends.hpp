#pragma once

#include <cstdint>

// Internal: per-backend kernel entry points wired up by dispatch.cpp.

namespace ticl::kern::ref {

void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
          const float* a, int64_t lda, const float* b, int64_t ldb,
          float beta, float* c, int64_t ldc);
void axpy(int64_t n, float a, const float* x, float* y);
void vadd(int64_t n, const float* a, const float* b, float* out);
void vsub(int64_t n, const float* a, const float* b, float* out);
void vmul(int64_t n, const float* a, const float* b, float* out);
void vscale(int64_t n, float a, const float* x, float* out);
double vsum(int64_t n, const float* x);
double vdot(int64_t n, const float* x, const float* y);
float vmax(int64_t n, const float* x);
bool all_finite(int64_t n, const float* x);

} // namespace ticl::kern::ref

#if defined(TICL_HAVE_AVX2)
namespace ticl::kern::avx2 {

void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
          const float* a, int64_t lda, const float* b, int64_t ldb,
          float beta, float* c, int64_t ldc);
void axpy(int64_t n, float a, const float* x, float* y);
void vadd(int64_t n, const float* a, const float* b, float* out);
void vsub(int64_t n, const float* a, const float* b, float* out);
void vmul(int64_t n, const float* a, const float* b, float* out);
void vscale(int64_t n, float a, const float* x, float* out);
double vsum(int64_t n, const float* x);
double vdot(int64_t n, const float* x, const float* y);
float vmax(int64_t n, const float* x);
bool all_finite(int64_t n, const float* x);

} // namespace ticl::kern::avx2
#endif
