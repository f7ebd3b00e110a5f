#pragma once

#include <cstdint>
#include <functional>

namespace ticl::kern {

// Data-parallel inner loops behind the tensor ops. Every kernel has a scalar
// reference implementation and (on x86-64) an AVX2+FMA variant; the active
// backend is chosen once per process from CPU capabilities and may be pinned
// with TICL_KERNELS=scalar|avx2. Reductions accumulate in 64-bit floats.

enum class Backend { scalar, avx2 };

Backend active_backend();
const char* backend_name(Backend b);

/// Force a backend. Requests for an unsupported backend fall back to scalar.
void select_backend(Backend b);

/// Threads used by row-partitioned kernels; read once from TICL_THREADS.
/// Results are bit-identical for any thread count (outputs are partitioned,
/// never reduced across threads).
int thread_count();

/// C = alpha * op(A) * op(B) + beta * C, row-major, double accumulation.
/// op(A) is m x k (k x m stored when ta), op(B) is k x n (n x k stored when tb).
/// beta == 0 overwrites C without reading it.
void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
          const float* a, int64_t lda, const float* b, int64_t ldb,
          float beta, float* c, int64_t ldc);

void axpy(int64_t n, float a, const float* x, float* y); // y += a * x
void vadd(int64_t n, const float* a, const float* b, float* out);
void vsub(int64_t n, const float* a, const float* b, float* out);
void vmul(int64_t n, const float* a, const float* b, float* out);
void vscale(int64_t n, float a, const float* x, float* out);

double vsum(int64_t n, const float* x);
double vdot(int64_t n, const float* x, const float* y);
float vmax(int64_t n, const float* x); // n >= 1, finite inputs
bool all_finite(int64_t n, const float* x);

/// Run fn(lo, hi) over a contiguous partition of [begin, end) on the pool.
/// With one thread this is a plain call; partition depends only on the range
/// and thread count.
void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t, int64_t)>& fn);

} // namespace ticl::kern
