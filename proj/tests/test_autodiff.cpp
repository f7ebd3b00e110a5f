#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "ticl/gradcheck.hpp"
#include "ticl/optim.hpp"
#include "ticl/tape.hpp"

using namespace ticl;

namespace {

Parameter make_param(const char* name, Shape shape, std::vector<float> values) {
    Parameter p{Tensor(std::move(shape), std::move(values)), name, false};
    p.tensor.requires_grad = true;
    return p;
}

} // namespace

TEST_CASE("matmul forward oracles") {
    Tape t;
    Var a = t.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
    Var b = t.leaf(Tensor({2, 2}, {5, 6, 7, 8}));
    const Tensor& c = t.value(t.matmul(a, b));
    CHECK(c.values == std::vector<float>{19, 22, 43, 50});

    Var eye = t.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
    CHECK(t.value(t.matmul(a, eye)).values == t.value(a).values);
    Var zero = t.leaf(Tensor::zeros({2, 3}));
    for (float v : t.value(t.matmul(a, zero)).values) CHECK(v == 0.0f);

    CHECK_THROWS_AS((void)t.matmul(a, t.leaf(Tensor::zeros({3, 2}))), ShapeError);
}

TEST_CASE("softmax values, symmetry and shift invariance") {
    Tape t;
    const Tensor& u = t.value(t.softmax(t.leaf(Tensor({3}, {0, 0, 0})), 0));
    for (float v : u.values) CHECK(v == doctest::Approx(1.0f / 3.0f));

    const Tensor& s = t.value(t.softmax(t.leaf(Tensor({3}, {1, 2, 3})), 0));
    CHECK(s.values[0] == doctest::Approx(0.0900).epsilon(1e-3));
    CHECK(s.values[1] == doctest::Approx(0.2447).epsilon(1e-3));
    CHECK(s.values[2] == doctest::Approx(0.6652).epsilon(1e-3));
    CHECK(std::abs(s.values[0] - 0.0900f) < 1e-4f);
    CHECK(std::abs(s.values[1] - 0.2447f) < 1e-4f);
    CHECK(std::abs(s.values[2] - 0.6652f) < 1e-4f);

    const Tensor& shifted = t.value(t.softmax(t.leaf(Tensor({3}, {1 + 7.5f, 2 + 7.5f, 3 + 7.5f})), 0));
    for (size_t i = 0; i < 3; ++i) {
        CHECK(shifted.values[i] == doctest::Approx(s.values[i]).epsilon(1e-6));
    }
}

TEST_CASE("softmax rows sum to one and stay in (0,1) on random input") {
    Rng rng(5);
    Tape t;
    Tensor x = Tensor::randn({4, 6, 9}, rng, 3.0f);
    for (int64_t axis : {0, 1, 2}) {
        const Tensor& y = t.value(t.softmax(t.leaf(x), axis));
        int64_t inner = 1;
        for (int64_t i = axis + 1; i < y.rank(); ++i) inner *= y.dim(i);
        const int64_t len = y.dim(axis);
        const int64_t outer = y.numel() / (len * inner);
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t in = 0; in < inner; ++in) {
                double sum = 0.0;
                for (int64_t i = 0; i < len; ++i) {
                    const float v = y.values[static_cast<size_t>(o * len * inner + i * inner + in)];
                    CHECK(v > 0.0f);
                    CHECK(v < 1.0f);
                    sum += v;
                }
                CHECK(std::abs(sum - 1.0) < 1e-6);
            }
        }
    }
}

TEST_CASE("layer_norm oracles") {
    Tape t;
    Var g1 = t.leaf(Tensor({3}, {1, 1, 1}));
    Var b0 = t.leaf(Tensor({3}, {0, 0, 0}));

    const Tensor& z = t.value(t.layer_norm(t.leaf(Tensor({1, 3}, {5, 5, 5})), g1, b0, 1e-5f));
    for (float v : z.values) CHECK(std::abs(v) < 1e-3f);

    Var g0 = t.leaf(Tensor({3}, {0, 0, 0}));
    Var beta = t.leaf(Tensor({3}, {2, -1, 4}));
    const Tensor& w = t.value(t.layer_norm(t.leaf(Tensor({1, 3}, {1, 2, 3})), g0, beta, 1e-5f));
    CHECK(w.values == std::vector<float>{2, -1, 4});

    const Tensor& n = t.value(t.layer_norm(t.leaf(Tensor({1, 3}, {1, 2, 3})), g1, b0, 1e-5f));
    CHECK(std::abs(n.values[0] - (-1.2247f)) < 1e-3f);
    CHECK(std::abs(n.values[1]) < 1e-3f);
    CHECK(std::abs(n.values[2] - 1.2247f) < 1e-3f);
}

TEST_CASE("gelu oracles") {
    Tape t;
    const Tensor& y = t.value(t.gelu(t.leaf(Tensor({4}, {0.0f, 1.0f, 20.0f, -20.0f}))));
    CHECK(y.values[0] == 0.0f);
    CHECK(std::abs(y.values[1] - 0.8413f) < 1e-3f);
    CHECK(y.values[2] == doctest::Approx(20.0f));   // x -> x as x -> +inf
    CHECK(std::abs(y.values[3]) < 1e-6f);           // x -> 0 as x -> -inf
}

TEST_CASE("sigmoid oracles") {
    Tape t;
    const Tensor& y = t.value(t.sigmoid(t.leaf(Tensor({2}, {0.0f, 2.0f}))));
    CHECK(y.values[0] == 0.5f);
    CHECK(std::abs(y.values[1] - 0.8808f) < 1e-4f);

    Rng rng(3);
    Tensor x = Tensor::randn({64}, rng, 2.0f);
    Tensor neg = x;
    for (float& v : neg.values) v = -v;
    const Tensor& sp = t.value(t.sigmoid(t.leaf(x)));
    const Tensor& sn = t.value(t.sigmoid(t.leaf(neg)));
    for (size_t i = 0; i < sp.values.size(); ++i) {
        CHECK(sn.values[i] == doctest::Approx(1.0f - sp.values[i]).epsilon(1e-6));
    }
}

TEST_CASE("cross_entropy oracles") {
    Tape t;
    // uniform logits over 10 classes
    Var u = t.cross_entropy(t.leaf(Tensor::zeros({1, 10})), std::vector<int32_t>{3});
    CHECK(t.precise(u) == doctest::Approx(std::log(10.0)).epsilon(1e-9));

    // overwhelming correct-class logit drives the loss to 0
    Var big = t.cross_entropy(t.leaf(Tensor({1, 3}, {50.0f, 0.0f, 0.0f})),
                              std::vector<int32_t>{0});
    CHECK(t.scalar(big) < 1e-6f);

    Var two = t.cross_entropy(t.leaf(Tensor({1, 2}, {2.0f, 0.0f})), std::vector<int32_t>{0});
    CHECK(std::abs(t.precise(two) - 0.126928) < 1e-4);

    CHECK_THROWS(t.cross_entropy(t.leaf(Tensor::zeros({1, 2})), std::vector<int32_t>{2}));
    CHECK_THROWS(t.cross_entropy(t.leaf(Tensor::zeros({1, 2})), std::vector<int32_t>{-1}));

    // soft targets match the equivalent hard case and reject bad rows
    Var hard = t.cross_entropy(t.leaf(Tensor({1, 2}, {2.0f, 0.0f})), std::vector<int32_t>{0});
    Var soft = t.cross_entropy(t.leaf(Tensor({1, 2}, {2.0f, 0.0f})), Tensor({1, 2}, {1.0f, 0.0f}));
    CHECK(t.scalar(hard) == t.scalar(soft));
    CHECK_THROWS_AS(t.cross_entropy(t.leaf(Tensor::zeros({1, 2})), Tensor({1, 2}, {0.7f, 0.7f})),
                    NumericError);
}

TEST_CASE("feature_distance oracles") {
    Tape t;
    Var fd = t.feature_distance(t.leaf(Tensor({2}, {3, 4})), t.leaf(Tensor({2}, {0, 0})));
    CHECK(t.scalar(fd) == doctest::Approx(5.0f));

    Rng rng(9);
    Tensor u = Tensor::randn({4, 8}, rng);
    Tensor v = Tensor::randn({4, 8}, rng);
    CHECK(t.scalar(t.feature_distance(t.leaf(u), t.leaf(u))) == 0.0f);
    CHECK(t.scalar(t.feature_distance(t.leaf(u), t.leaf(v))) ==
          t.scalar(t.feature_distance(t.leaf(v), t.leaf(u))));
    CHECK(t.scalar(t.feature_distance(t.leaf(u), t.leaf(v))) >= 0.0f);
    CHECK_THROWS_AS((void)t.feature_distance(t.leaf(u), t.leaf(Tensor::zeros({4, 7}))), ShapeError);

    // squared form
    Var sq = t.feature_distance(t.leaf(Tensor({2}, {3, 4})), t.leaf(Tensor({2}, {0, 0})), true);
    CHECK(t.scalar(sq) == doctest::Approx(25.0f));
}

TEST_CASE("backward: analytic derivative of x^2 and constant leaves") {
    Parameter x = make_param("x", {1}, {3.0f});
    Tape t;
    Var xv = t.leaf(x);
    Var loss = t.sum(t.mul(xv, xv));
    t.backward(loss);
    REQUIRE(x.tensor.has_grad());
    CHECK(x.tensor.grad[0] == 6.0f);

    // a graph of constants only: no gradient buffers anywhere
    Tape t2;
    Var c = t2.leaf(Tensor({1}, {5.0f}));
    Var l2 = t2.sum(t2.mul(c, c));
    t2.backward(l2);
    CHECK(t2.scalar(l2) == 25.0f);
}

TEST_CASE("backward: gradient accumulation is additive across graphs") {
    Parameter x = make_param("x", {3}, {1.0f, -2.0f, 0.5f});

    auto grads_of = [&](bool do_f, bool do_g) {
        x.tensor.grad.clear();
        if (do_f) {
            Tape t;
            Var xv = t.leaf(x);
            t.backward(t.sum(t.mul(xv, xv)));
        }
        if (do_g) {
            Tape t;
            Var xv = t.leaf(x);
            t.backward(t.sum(xv));
        }
        return x.tensor.grad;
    };
    const auto gf = grads_of(true, false);
    const auto gg = grads_of(false, true);
    const auto gfg = grads_of(true, true);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(gfg[i] == gf[i] + gg[i]);
    }
}

TEST_CASE("backward errors: non-scalar loss, double consumption") {
    Parameter x = make_param("x", {2}, {1.0f, 2.0f});
    Tape t;
    Var xv = t.leaf(x);
    Var y = t.mul(xv, xv);
    CHECK_THROWS_AS(t.backward(y), ShapeError);
    Var s = t.sum(y);
    t.backward(s);
    CHECK_THROWS_AS(t.backward(s), StateError);
    t.clear();
    CHECK_THROWS_AS((void)t.value(s), StateError);
}

TEST_CASE("non-finite forward output raises") {
    Tape t;
    Var big = t.leaf(Tensor({1}, {1e38f}));
    CHECK_THROWS_AS((void)t.mul(big, big), NumericError);
}

TEST_CASE("finite forward outputs for inputs up to |x| = 1e3") {
    Rng rng(21);
    Tape t;
    Tensor x({2, 16});
    for (float& v : x.values) {
        v = static_cast<float>(rng.next_unit() * 2000.0 - 1000.0);
    }
    Var xv = t.leaf(x);
    (void)t.value(t.gelu(xv));
    (void)t.value(t.sigmoid(xv));
    (void)t.value(t.softmax(xv, 1));
    Var g = t.leaf(Tensor::full({16}, 1.0f));
    Var b = t.leaf(Tensor::zeros({16}));
    (void)t.value(t.layer_norm(xv, g, b, 1e-5f));
    (void)t.precise(t.cross_entropy(xv, std::vector<int32_t>{0, 5}));
    // reaching here means every check_finite passed
    CHECK(true);
}

TEST_CASE("finite differences: matmul chain, quadratic form, every op") {
    Rng rng(33);
    FdConfig fd;
    fd.seed = 101;

    SUBCASE("linear function agrees almost exactly") {
        Parameter x = make_param("x", {4}, {0.5f, -1.0f, 2.0f, 0.25f});
        auto eval = [&]() {
            Tape t;
            return t.precise(t.sum(t.scale(t.leaf(x), 3.0f)));
        };
        x.tensor.grad.clear();
        {
            Tape t;
            t.backward(t.sum(t.scale(t.leaf(x), 3.0f)));
        }
        FdConfig cfg = fd;
        cfg.probes = 4;
        Parameter* params[] = {&x};
        const FdReport r = finite_difference_check(params, eval, cfg);
        CHECK(r.passed());
        CHECK(r.max_abs < 1e-3); // float storage rounding only
    }

    SUBCASE("quadratic form x^T A x") {
        Parameter x{Tensor::randn({1, 5}, rng), "x", false};
        x.tensor.requires_grad = true;
        const Tensor a = Tensor::randn({5, 5}, rng);
        auto eval = [&]() {
            Tape t;
            Var xv = t.leaf(x);
            return t.precise(t.sum(t.mul(t.matmul(xv, t.leaf(a)), xv)));
        };
        x.tensor.grad.clear();
        {
            Tape t;
            Var xv = t.leaf(x);
            t.backward(t.sum(t.mul(t.matmul(xv, t.leaf(a)), xv)));
        }
        Parameter* params[] = {&x};
        FdConfig cfg = fd;
        cfg.probes = 5;
        const FdReport r = finite_difference_check(params, eval, cfg);
        CHECK(r.passed());
    }

    SUBCASE("composite graph through every tape operation") {
        // exercises matmul, bmm (all transpose combos), softmax, layer_norm,
        // gelu, sigmoid, relpos_expand, gpsa_mix, heads split/merge,
        // prepend_row, take_row0, cross_entropy, feature_distance, add_bias
        const int64_t B = 2, N = 4, D = 6, H = 2;
        Parameter w = make_param("w", {D, D}, Tensor::randn({D, D}, rng, 0.3f).values);
        Parameter bias = make_param("bias", {D}, Tensor::randn({D}, rng, 0.3f).values);
        Parameter tok = make_param("tok", {D}, Tensor::randn({D}, rng, 0.5f).values);
        Parameter gamma = make_param("gamma", {D}, Tensor::full({D}, 1.2f).values);
        Parameter beta = make_param("beta", {D}, Tensor::randn({D}, rng, 0.1f).values);
        Parameter pos = make_param("pos", {H, 9}, Tensor::randn({H, 9}, rng, 0.4f).values);
        Parameter gate = make_param("gate", {H}, {0.3f, -0.6f});
        const Tensor input = Tensor::randn({B, N, D}, rng, 0.7f);
        const Tensor other = Tensor::randn({B, D}, rng, 0.7f);
        std::vector<int32_t> rel_map(N * N);
        for (int64_t i = 0; i < N; ++i) {
            for (int64_t j = 0; j < N; ++j) {
                const int64_t dr = (j / 2) - (i / 2) + 1, dc = (j % 2) - (i % 2) + 1;
                rel_map[static_cast<size_t>(i * N + j)] = static_cast<int32_t>(dr * 3 + dc);
            }
        }

        auto build = [&](Tape& t) {
            Var x = t.leaf(input);
            Var z = t.prepend_row(t.add_bias(t.matmul(x, t.leaf(w)), t.leaf(bias)),
                                  t.leaf(tok));
            Var h = t.layer_norm(z, t.leaf(gamma), t.leaf(beta), 1e-5f);
            Var q = t.split_heads(h, H);
            Var scores = t.bmm(q, q, false, true, 0.57f);
            Var content = t.softmax(scores, 2);
            Var patt = t.softmax(t.relpos_expand(t.leaf(pos), rel_map, N), 2);
            Var mix = t.gpsa_mix(content, patt, t.sigmoid(t.leaf(gate)));
            Var ctx = t.merge_heads(t.bmm(mix, q, false, false), H);
            Var zz = t.add(z, t.gelu(ctx));
            Var u = t.take_row0(zz);
            Var ce = t.cross_entropy(t.matmul(u, t.leaf(w)), std::vector<int32_t>{1, 3});
            Var fdist = t.feature_distance(u, t.leaf(other));
            return t.add(ce, t.scale(fdist, 0.5f));
        };
        auto eval = [&]() {
            Tape t;
            return t.precise(build(t));
        };
        std::vector<Parameter*> params = {&w, &bias, &tok, &gamma, &beta, &pos, &gate};
        for (Parameter* p : params) p->tensor.grad.clear();
        {
            Tape t;
            t.backward(build(t));
        }
        FdConfig cfg = fd;
        cfg.probes = 120;
        // the evaluation here is the float32 graph itself, so the difference
        // quotient carries ~1e-4 absolute noise; the spec-tolerance pass runs
        // at the encoder level against the 64-bit reference model
        cfg.tol_rel = 2e-3;
        cfg.tol_abs = 1e-3;
        const FdReport r = finite_difference_check(params, eval, cfg);
        if (!r.passed()) {
            for (const auto& f : r.failures) {
                MESSAGE(f.name, "[", f.index, "] analytic ", f.analytic, " numeric ", f.numeric);
            }
        }
        CHECK(r.passed());
    }
}

TEST_CASE("finite_difference_check rejects non-deterministic functions") {
    Parameter x = make_param("x", {1}, {1.0f});
    x.tensor.ensure_grad();
    int calls = 0;
    auto eval = [&]() { return static_cast<double>(++calls); };
    Parameter* params[] = {&x};
    CHECK_THROWS_AS((void)finite_difference_check(params, eval, FdConfig{}), NumericError);
}

TEST_CASE("optimizer: sgd step, zero gradient, frozen parameters") {
    Parameter p = make_param("p", {2}, {0.0f, 1.0f});
    p.tensor.ensure_grad();
    p.tensor.grad = {1.0f, 0.0f};

    OptimConfig cfg;
    cfg.kind = OptimConfig::Kind::sgd;
    cfg.lr = 0.1f;
    cfg.cosine = false;
    Optimizer opt({&p}, cfg);
    opt.step();
    CHECK(p.tensor.values[0] == doctest::Approx(-0.1f)); // lr 0.1, grad 1
    CHECK(p.tensor.values[1] == 1.0f);                   // zero gradient: unchanged

    // frozen parameter with a nonzero gradient stays bit-identical
    Parameter f = make_param("f", {2}, {0.25f, -0.75f});
    f.frozen = true;
    f.tensor.ensure_grad();
    f.tensor.grad = {10.0f, -3.0f};
    const std::vector<float> before = f.tensor.values;
    Optimizer opt2({&f}, cfg);
    opt2.step();
    CHECK(std::memcmp(before.data(), f.tensor.values.data(), sizeof(float) * 2) == 0);

    // an unfrozen parameter without gradients is an error
    Parameter q = make_param("q", {1}, {0.0f});
    Optimizer opt3({&q}, cfg);
    CHECK_THROWS_AS(opt3.step(), NumericError);
}

TEST_CASE("optimizer: adamw moves against the gradient and decays weights") {
    Parameter p = make_param("p", {1}, {1.0f});
    p.tensor.ensure_grad();
    OptimConfig cfg;
    cfg.lr = 0.1f;
    cfg.weight_decay = 0.0f;
    cfg.cosine = false;
    Optimizer opt({&p}, cfg);
    p.tensor.grad = {2.0f};
    opt.step();
    // first adamw step moves by about lr regardless of gradient scale
    CHECK(p.tensor.values[0] == doctest::Approx(0.9f).epsilon(1e-3));

    // cosine schedule reaches ~0 at total_steps
    OptimConfig sched;
    sched.cosine = true;
    sched.total_steps = 10;
    sched.lr = 1.0f;
    Optimizer opt2({&p}, sched);
    CHECK(opt2.current_lr() == doctest::Approx(1.0f));
    for (int i = 0; i < 10; ++i) {
        p.tensor.grad = {0.0f};
        opt2.step();
    }
    CHECK(opt2.current_lr() == doctest::Approx(0.0f).epsilon(1e-6));
}
