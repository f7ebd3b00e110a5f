#include "ticl/kernels.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "backends.hpp"

namespace ticl::kern {

namespace {

struct VTable {
    decltype(&ref::gemm) gemm = ref::gemm;
    decltype(&ref::axpy) axpy = ref::axpy;
    decltype(&ref::vadd) vadd = ref::vadd;
    decltype(&ref::vsub) vsub = ref::vsub;
    decltype(&ref::vmul) vmul = ref::vmul;
    decltype(&ref::vscale) vscale = ref::vscale;
    decltype(&ref::vsum) vsum = ref::vsum;
    decltype(&ref::vdot) vdot = ref::vdot;
    decltype(&ref::vmax) vmax = ref::vmax;
    decltype(&ref::all_finite) all_finite = ref::all_finite;
};

VTable g_table;
Backend g_backend = Backend::scalar;

bool avx2_supported() {
#if defined(TICL_HAVE_AVX2)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

void apply_backend(Backend b) {
#if defined(TICL_HAVE_AVX2)
    if (b == Backend::avx2 && avx2_supported()) {
        g_table.gemm = avx2::gemm;
        g_table.axpy = avx2::axpy;
        g_table.vadd = avx2::vadd;
        g_table.vsub = avx2::vsub;
        g_table.vmul = avx2::vmul;
        g_table.vscale = avx2::vscale;
        g_table.vsum = avx2::vsum;
        g_table.vdot = avx2::vdot;
        g_table.vmax = avx2::vmax;
        g_table.all_finite = avx2::all_finite;
        g_backend = Backend::avx2;
        return;
    }
#endif
    g_table = VTable{};
    g_backend = Backend::scalar;
}

struct AutoSelect {
    AutoSelect() {
        Backend want = avx2_supported() ? Backend::avx2 : Backend::scalar;
        if (const char* env = std::getenv("TICL_KERNELS")) {
            if (std::strcmp(env, "scalar") == 0) want = Backend::scalar;
            if (std::strcmp(env, "avx2") == 0 && avx2_supported()) want = Backend::avx2;
        }
        apply_backend(want);
    }
};
AutoSelect g_auto_select;

int read_thread_count() {
    if (const char* env = std::getenv("TICL_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1 && v <= 256) return v;
    }
    return 1;
}

// Persistent pool: workers pick up one job slice per epoch, the caller runs
// slice 0 itself and waits for the rest.
class Pool {
public:
    explicit Pool(int workers) {
        for (int w = 0; w < workers; ++w) {
            threads_.emplace_back([this, w] { worker_loop(w + 1); });
        }
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(m_);
            stop_ = true;
            ++epoch_;
        }
        cv_work_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void run(int parts, const std::function<void(int)>& fn) {
        {
            std::lock_guard<std::mutex> lk(m_);
            job_ = &fn;
            parts_ = parts;
            pending_ = parts - 1;
            ++epoch_;
        }
        cv_work_.notify_all();
        fn(0);
        std::unique_lock<std::mutex> lk(m_);
        cv_done_.wait(lk, [this] { return pending_ == 0; });
        job_ = nullptr;
    }

private:
    void worker_loop(int index) {
        uint64_t seen = 0;
        for (;;) {
            const std::function<void(int)>* job = nullptr;
            {
                std::unique_lock<std::mutex> lk(m_);
                cv_work_.wait(lk, [&] { return epoch_ != seen; });
                seen = epoch_;
                if (stop_) return;
                if (index < parts_) job = job_;
            }
            if (job) (*job)(index);
            {
                std::lock_guard<std::mutex> lk(m_);
                if (index < parts_ && --pending_ == 0) cv_done_.notify_one();
            }
        }
    }

    std::vector<std::thread> threads_;
    std::mutex m_;
    std::condition_variable cv_work_, cv_done_;
    const std::function<void(int)>* job_ = nullptr;
    uint64_t epoch_ = 0;
    int parts_ = 0;
    int pending_ = 0;
    bool stop_ = false;
};

Pool& pool() {
    static Pool p(thread_count() - 1);
    return p;
}

// Below this many multiply-adds a gemm is not worth partitioning.
constexpr int64_t kGemmSplitWork = int64_t(1) << 18;

} // namespace

Backend active_backend() { return g_backend; }

const char* backend_name(Backend b) {
    return b == Backend::avx2 ? "avx2" : "scalar";
}

void select_backend(Backend b) { apply_backend(b); }

int thread_count() {
    static const int n = read_thread_count();
    return n;
}

void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t, int64_t)>& fn) {
    const int64_t span = end - begin;
    const int nt = thread_count();
    if (span <= 0) return;
    if (nt <= 1 || span < 2) {
        fn(begin, end);
        return;
    }
    const int parts = static_cast<int>(std::min<int64_t>(nt, span));
    std::function<void(int)> slice = [&](int p) {
        const int64_t lo = begin + span * p / parts;
        const int64_t hi = begin + span * (p + 1) / parts;
        if (lo < hi) fn(lo, hi);
    };
    pool().run(parts, slice);
}

void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
          const float* a, int64_t lda, const float* b, int64_t ldb,
          float beta, float* c, int64_t ldc) {
    const int nt = thread_count();
    if (nt <= 1 || m < 2 * nt || m * n * k < kGemmSplitWork) {
        g_table.gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
        return;
    }
    // Row partition of C: every output element is still produced by exactly
    // one sequential reduction, so the result does not depend on nt.
    parallel_for(0, m, [&](int64_t r0, int64_t r1) {
        const float* a_part = ta ? a + r0 : a + r0 * lda;
        g_table.gemm(ta, tb, r1 - r0, n, k, alpha, a_part, lda, b, ldb,
                     beta, c + r0 * ldc, ldc);
    });
}

void axpy(int64_t n, float a, const float* x, float* y) { g_table.axpy(n, a, x, y); }
void vadd(int64_t n, const float* a, const float* b, float* out) { g_table.vadd(n, a, b, out); }
void vsub(int64_t n, const float* a, const float* b, float* out) { g_table.vsub(n, a, b, out); }
void vmul(int64_t n, const float* a, const float* b, float* out) { g_table.vmul(n, a, b, out); }
void vscale(int64_t n, float a, const float* x, float* out) { g_table.vscale(n, a, x, out); }
double vsum(int64_t n, const float* x) { return g_table.vsum(n, x); }
double vdot(int64_t n, const float* x, const float* y) { return g_table.vdot(n, x, y); }
float vmax(int64_t n, const float* x) { return g_table.vmax(n, x); }
bool all_finite(int64_t n, const float* x) { return g_table.all_finite(n, x); }

} // namespace ticl::kern
