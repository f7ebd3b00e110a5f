#include <doctest.h>

#include <cmath>
#include <vector>

#include "ticl/kernels.hpp"
#include "ticl/rng.hpp"

using namespace ticl;

namespace {

std::vector<float> random_vec(Rng& rng, int64_t n, float scale = 1.0f) {
    std::vector<float> v(static_cast<size_t>(n));
    for (float& x : v) x = static_cast<float>(rng.normal(0.0, scale));
    return v;
}

bool avx2_active_possible() {
    const kern::Backend saved = kern::active_backend();
    kern::select_backend(kern::Backend::avx2);
    const bool ok = kern::active_backend() == kern::Backend::avx2;
    kern::select_backend(saved);
    return ok;
}

struct BackendGuard {
    kern::Backend saved = kern::active_backend();
    ~BackendGuard() { kern::select_backend(saved); }
};

// independent of both backends: plain double triple loop
void gemm_oracle(bool ta, bool tb, int64_t m, int64_t n, int64_t k, float alpha,
                 const float* a, int64_t lda, const float* b, int64_t ldb,
                 float beta, const float* c_in, double* c_out, int64_t ldc) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) {
                const double av = ta ? a[p * lda + i] : a[i * lda + p];
                const double bv = tb ? b[j * ldb + p] : b[p * ldb + j];
                acc += av * bv;
            }
            c_out[i * ldc + j] = alpha * acc + (beta != 0.0f ? beta * c_in[i * ldc + j] : 0.0);
        }
    }
}

} // namespace

TEST_CASE("gemm matches a double oracle for every transpose combination") {
    Rng rng(7);
    BackendGuard guard;
    for (int trans = 0; trans < 4; ++trans) {
        const bool ta = trans & 1, tb = (trans & 2) != 0;
        for (int64_t m : {1, 2, 5, 17}) {
            for (int64_t n : {1, 3, 8, 13}) {
                for (int64_t k : {1, 4, 9, 32}) {
                    const auto a = random_vec(rng, m * k);
                    const auto b = random_vec(rng, k * n);
                    auto c0 = random_vec(rng, m * n);
                    std::vector<double> want(static_cast<size_t>(m * n));
                    const int64_t lda = ta ? m : k;
                    const int64_t ldb = tb ? k : n;
                    gemm_oracle(ta, tb, m, n, k, 0.5f, a.data(), lda, b.data(), ldb, 0.25f,
                                c0.data(), want.data(), n);
                    for (kern::Backend be : {kern::Backend::scalar, kern::Backend::avx2}) {
                        kern::select_backend(be);
                        if (kern::active_backend() != be) continue;
                        auto c = c0;
                        kern::gemm(ta, tb, m, n, k, 0.5f, a.data(), lda, b.data(), ldb, 0.25f,
                                   c.data(), n);
                        for (size_t i = 0; i < c.size(); ++i) {
                            CHECK(c[i] == doctest::Approx(want[i]).epsilon(1e-5));
                        }
                    }
                }
            }
        }
    }
}

TEST_CASE("scalar and avx2 backends agree") {
    if (!avx2_active_possible()) return; // nothing to compare on this machine
    Rng rng(11);
    BackendGuard guard;
    for (int64_t n : {1, 2, 7, 8, 9, 15, 16, 17, 100, 1000}) {
        const auto x = random_vec(rng, n);
        const auto y = random_vec(rng, n);

        auto run = [&](kern::Backend be) {
            kern::select_backend(be);
            struct Out {
                std::vector<float> add, sub, mul, scl, axpy;
                double sum, dot;
                float mx;
            } out;
            out.add.resize(static_cast<size_t>(n));
            out.sub.resize(static_cast<size_t>(n));
            out.mul.resize(static_cast<size_t>(n));
            out.scl.resize(static_cast<size_t>(n));
            out.axpy = y;
            kern::vadd(n, x.data(), y.data(), out.add.data());
            kern::vsub(n, x.data(), y.data(), out.sub.data());
            kern::vmul(n, x.data(), y.data(), out.mul.data());
            kern::vscale(n, 1.7f, x.data(), out.scl.data());
            kern::axpy(n, 0.3f, x.data(), out.axpy.data());
            out.sum = kern::vsum(n, x.data());
            out.dot = kern::vdot(n, x.data(), y.data());
            out.mx = kern::vmax(n, x.data());
            return out;
        };
        const auto s = run(kern::Backend::scalar);
        const auto v = run(kern::Backend::avx2);
        REQUIRE(kern::active_backend() == kern::Backend::avx2);

        // single-rounding elementwise ops are bit-identical
        CHECK(s.add == v.add);
        CHECK(s.sub == v.sub);
        CHECK(s.mul == v.mul);
        CHECK(s.scl == v.scl);
        CHECK(s.mx == v.mx);
        // fma and lane reassociation allow tiny differences
        for (size_t i = 0; i < s.axpy.size(); ++i) {
            CHECK(v.axpy[i] == doctest::Approx(s.axpy[i]).epsilon(1e-6));
        }
        CHECK(v.sum == doctest::Approx(s.sum).epsilon(1e-12));
        CHECK(v.dot == doctest::Approx(s.dot).epsilon(1e-10));
    }
}

TEST_CASE("gemm backends agree on larger shapes") {
    if (!avx2_active_possible()) return;
    Rng rng(13);
    BackendGuard guard;
    const int64_t m = 34, n = 48, k = 48;
    const auto a = random_vec(rng, m * k);
    const auto b = random_vec(rng, k * n);
    std::vector<float> cs(static_cast<size_t>(m * n)), cv = cs;
    kern::select_backend(kern::Backend::scalar);
    kern::gemm(false, false, m, n, k, 1.0f, a.data(), k, b.data(), n, 0.0f, cs.data(), n);
    kern::select_backend(kern::Backend::avx2);
    kern::gemm(false, false, m, n, k, 1.0f, a.data(), k, b.data(), n, 0.0f, cv.data(), n);
    for (size_t i = 0; i < cs.size(); ++i) {
        CHECK(cv[i] == doctest::Approx(cs[i]).epsilon(1e-6));
    }
}

TEST_CASE("all_finite catches every placement of every non-finite kind") {
    BackendGuard guard;
    Rng rng(17);
    for (kern::Backend be : {kern::Backend::scalar, kern::Backend::avx2}) {
        kern::select_backend(be);
        if (kern::active_backend() != be) continue;
        for (int64_t n : {1, 7, 8, 9, 40}) {
            auto v = random_vec(rng, n);
            CHECK(kern::all_finite(n, v.data()));
            for (float bad : {std::nanf(""), INFINITY, -INFINITY}) {
                for (int64_t pos : {int64_t{0}, n / 2, n - 1}) {
                    auto w = v;
                    w[static_cast<size_t>(pos)] = bad;
                    CHECK_FALSE(kern::all_finite(n, w.data()));
                }
            }
        }
    }
}

TEST_CASE("parallel_for covers the range exactly once") {
    std::vector<int> hits(100, 0);
    kern::parallel_for(0, 100, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) ++hits[static_cast<size_t>(i)];
    });
    for (int h : hits) CHECK(h == 1);
}
