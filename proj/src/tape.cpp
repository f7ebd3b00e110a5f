#include "ticl/tape.hpp"

#include <cmath>
#include <numbers>

#include "ticl/kernels.hpp"

namespace ticl {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double phi_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
double phi_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

int64_t fold_rows(const Shape& s) {
    int64_t m = 1;
    for (size_t i = 0; i + 1 < s.size(); ++i) m *= s[i];
    return m;
}

} // namespace

Var Tape::check(Var v) const {
    if (v < 0 || static_cast<size_t>(v) >= nodes_.size()) {
        throw StateError("variable is not on this tape");
    }
    return v;
}

Var Tape::push(Node&& n) {
    if (consumed_) throw StateError("tape already consumed by backward; clear() first");
    nodes_.push_back(std::move(n));
    return static_cast<Var>(nodes_.size() - 1);
}

void Tape::check_finite(const Node& n, const char* op_name) const {
    const Tensor& t = val_of(n);
    if (!kern::all_finite(t.numel(), t.data())) {
        throw NumericError(std::string("non-finite value in output of ") + op_name);
    }
}

const Tensor& Tape::value(Var v) const { return val_of(node(check(v))); }

float Tape::scalar(Var v) const { return value(v).item(); }

double Tape::precise(Var v) const {
    const Node& n = node(check(v));
    if (val_of(n).numel() != 1) throw ShapeError("precise() on non-scalar");
    return n.precise;
}

void Tape::clear() {
    nodes_.clear();
    consumed_ = false;
}

float* Tape::grad_buffer(Var v) {
    Node& n = node(v);
    if (!n.needs_grad) return nullptr;
    if (n.op == Op::leaf) {
        n.sink->ensure_grad();
        return n.sink->grad.data();
    }
    if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.val.numel()), 0.0f);
    return n.grad.data();
}

// ---------------------------------------------------------------------------
// graph building

Var Tape::leaf(const Tensor& t) {
    Node n;
    n.op = Op::leaf;
    n.val = t;
    n.needs_grad = false;
    return push(std::move(n));
}

Var Tape::leaf(Parameter& p) {
    Node n;
    n.op = Op::leaf;
    n.ext = &p.tensor;
    if (p.trainable()) {
        n.sink = &p.tensor;
        n.needs_grad = true;
    }
    return push(std::move(n));
}

Var Tape::leaf(const Parameter& p) {
    Node n;
    n.op = Op::leaf;
    n.ext = &p.tensor;
    n.needs_grad = false;
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var w) {
    const Tensor& av = value(a);
    const Tensor& wv = value(w);
    if (av.rank() < 2 || wv.rank() != 2) {
        throw ShapeError("matmul expects rank>=2 by rank-2, got " +
                         shape_str(av.shape()) + " and " + shape_str(wv.shape()));
    }
    const int64_t k = av.dim(av.rank() - 1);
    if (k != wv.dim(0)) {
        throw ShapeError("matmul inner dimensions differ: " + shape_str(av.shape()) +
                         " vs " + shape_str(wv.shape()));
    }
    const int64_t m = fold_rows(av.shape());
    const int64_t nn = wv.dim(1);
    Shape out_shape = av.shape();
    out_shape.back() = nn;

    Node n;
    n.op = Op::matmul;
    n.in0 = a;
    n.in1 = w;
    n.val = Tensor(std::move(out_shape));
    kern::gemm(false, false, m, nn, k, 1.0f, av.data(), k, wv.data(), nn,
               0.0f, n.val.data(), nn);
    n.needs_grad = node(a).needs_grad || node(w).needs_grad;
    check_finite(n, "matmul");
    return push(std::move(n));
}

Var Tape::bmm(Var a, Var b, bool ta, bool tb, float alpha) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0)) {
        throw ShapeError("bmm expects G x . x . operands with equal G");
    }
    const int64_t g = av.dim(0);
    const int64_t m = ta ? av.dim(2) : av.dim(1);
    const int64_t k = ta ? av.dim(1) : av.dim(2);
    const int64_t kb = tb ? bv.dim(2) : bv.dim(1);
    const int64_t nn = tb ? bv.dim(1) : bv.dim(2);
    if (k != kb) {
        throw ShapeError("bmm inner dimensions differ: " + shape_str(av.shape()) +
                         " vs " + shape_str(bv.shape()));
    }
    Node n;
    n.op = Op::bmm;
    n.in0 = a;
    n.in1 = b;
    n.f0 = alpha;
    n.i0 = (ta ? 1 : 0) | (tb ? 2 : 0);
    n.val = Tensor({g, m, nn});
    const int64_t a_sz = av.dim(1) * av.dim(2);
    const int64_t b_sz = bv.dim(1) * bv.dim(2);
    for (int64_t gi = 0; gi < g; ++gi) {
        kern::gemm(ta, tb, m, nn, k, alpha,
                   av.data() + gi * a_sz, av.dim(2),
                   bv.data() + gi * b_sz, bv.dim(2),
                   0.0f, n.val.data() + gi * m * nn, nn);
    }
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    check_finite(n, "bmm");
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) {
        throw ShapeError("add shapes differ: " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
    }
    Node n;
    n.op = Op::add;
    n.in0 = a;
    n.in1 = b;
    n.val = Tensor(av.shape());
    kern::vadd(av.numel(), av.data(), bv.data(), n.val.data());
    if (av.numel() == 1) n.precise = node(a).precise + node(b).precise;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    check_finite(n, "add");
    return push(std::move(n));
}

Var Tape::add_bias(Var x, Var bias) {
    const Tensor& xv = value(x);
    const Tensor& bv = value(bias);
    if (bv.rank() != 1 || xv.rank() < 1 || xv.dim(xv.rank() - 1) != bv.dim(0)) {
        throw ShapeError("add_bias wants (..., D) plus (D), got " +
                         shape_str(xv.shape()) + " and " + shape_str(bv.shape()));
    }
    const int64_t d = bv.dim(0);
    const int64_t rows = xv.numel() / d;
    Node n;
    n.op = Op::add_bias;
    n.in0 = x;
    n.in1 = bias;
    n.val = Tensor(xv.shape());
    for (int64_t r = 0; r < rows; ++r) {
        kern::vadd(d, xv.data() + r * d, bv.data(), n.val.data() + r * d);
    }
    n.needs_grad = node(x).needs_grad || node(bias).needs_grad;
    check_finite(n, "add_bias");
    return push(std::move(n));
}

Var Tape::scale(Var x, float c) {
    const Tensor& xv = value(x);
    Node n;
    n.op = Op::scale;
    n.in0 = x;
    n.f0 = c;
    n.val = Tensor(xv.shape());
    kern::vscale(xv.numel(), c, xv.data(), n.val.data());
    if (xv.numel() == 1) n.precise = static_cast<double>(c) * node(x).precise;
    n.needs_grad = node(x).needs_grad;
    check_finite(n, "scale");
    return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (!av.same_shape(bv)) {
        throw ShapeError("mul shapes differ: " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()));
    }
    Node n;
    n.op = Op::mul;
    n.in0 = a;
    n.in1 = b;
    n.val = Tensor(av.shape());
    kern::vmul(av.numel(), av.data(), bv.data(), n.val.data());
    if (av.numel() == 1) n.precise = node(a).precise * node(b).precise;
    n.needs_grad = node(a).needs_grad || node(b).needs_grad;
    check_finite(n, "mul");
    return push(std::move(n));
}

Var Tape::sum(Var x) {
    const Tensor& xv = value(x);
    Node n;
    n.op = Op::sum;
    n.in0 = x;
    n.precise = kern::vsum(xv.numel(), xv.data());
    n.val = Tensor::scalar(static_cast<float>(n.precise));
    n.needs_grad = node(x).needs_grad;
    check_finite(n, "sum");
    return push(std::move(n));
}

Var Tape::softmax(Var x, int64_t axis) {
    const Tensor& xv = value(x);
    if (axis < 0 || axis >= xv.rank()) {
        throw ShapeError("softmax axis out of range for " + shape_str(xv.shape()));
    }
    const int64_t len = xv.dim(axis);
    int64_t inner = 1;
    for (int64_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
    const int64_t outer = xv.numel() / (len * inner);

    Node n;
    n.op = Op::softmax;
    n.in0 = x;
    n.i0 = axis;
    n.val = Tensor(xv.shape());
    std::vector<double> e(static_cast<size_t>(len));
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const float* row = xv.data() + o * len * inner + in;
            float* out = n.val.data() + o * len * inner + in;
            float mx = row[0];
            for (int64_t i = 1; i < len; ++i) mx = std::max(mx, row[i * inner]);
            double denom = 0.0;
            for (int64_t i = 0; i < len; ++i) {
                e[static_cast<size_t>(i)] = std::exp(static_cast<double>(row[i * inner]) - mx);
                denom += e[static_cast<size_t>(i)];
            }
            for (int64_t i = 0; i < len; ++i) {
                out[i * inner] = static_cast<float>(e[static_cast<size_t>(i)] / denom);
            }
        }
    }
    n.needs_grad = node(x).needs_grad;
    check_finite(n, "softmax");
    return push(std::move(n));
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, float eps) {
    const Tensor& xv = value(x);
    const Tensor& gv = value(gamma);
    const Tensor& bv = value(beta);
    const int64_t d = xv.dim(xv.rank() - 1);
    if (gv.rank() != 1 || bv.rank() != 1 || gv.dim(0) != d || bv.dim(0) != d) {
        throw ShapeError("layer_norm parameter length must equal the last axis");
    }
    const int64_t rows = xv.numel() / d;

    Node n;
    n.op = Op::layer_norm;
    n.in0 = x;
    n.in1 = gamma;
    n.in2 = beta;
    n.f0 = eps;
    n.val = Tensor(xv.shape());
    n.daux.resize(static_cast<size_t>(rows) * 2); // mean, invstd per row
    for (int64_t r = 0; r < rows; ++r) {
        const float* in = xv.data() + r * d;
        float* out = n.val.data() + r * d;
        const double mean = kern::vsum(d, in) / static_cast<double>(d);
        double var = 0.0;
        for (int64_t i = 0; i < d; ++i) {
            const double c = static_cast<double>(in[i]) - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double invstd = 1.0 / std::sqrt(var + static_cast<double>(eps));
        n.daux[static_cast<size_t>(r) * 2] = mean;
        n.daux[static_cast<size_t>(r) * 2 + 1] = invstd;
        for (int64_t i = 0; i < d; ++i) {
            const double xhat = (static_cast<double>(in[i]) - mean) * invstd;
            out[i] = static_cast<float>(xhat * static_cast<double>(gv.data()[i]) +
                                        static_cast<double>(bv.data()[i]));
        }
    }
    n.needs_grad = node(x).needs_grad || node(gamma).needs_grad || node(beta).needs_grad;
    check_finite(n, "layer_norm");
    return push(std::move(n));
}

Var Tape::gelu(Var x) {
    const Tensor& xv = value(x);
    Node n;
    n.op = Op::gelu;
    n.in0 = x;
    n.val = Tensor(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) {
        const double v = xv.data()[i];
        n.val.data()[i] = static_cast<float>(v * phi_cdf(v));
    }
    n.needs_grad = node(x).needs_grad;
    check_finite(n, "gelu");
    return push(std::move(n));
}

Var Tape::sigmoid(Var x) {
    const Tensor& xv = value(x);
    Node n;
    n.op = Op::sigmoid;
    n.in0 = x;
    n.val = Tensor(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) {
        const double v = xv.data()[i];
        n.val.data()[i] = static_cast<float>(1.0 / (1.0 + std::exp(-v)));
    }
    n.needs_grad = node(x).needs_grad;
    check_finite(n, "sigmoid");
    return push(std::move(n));
}

Var Tape::relpos_expand(Var table, const std::vector<int32_t>& index_map, int64_t nn) {
    const Tensor& tv = value(table);
    if (tv.rank() != 2) throw ShapeError("relpos_expand wants an H x R table");
    if (static_cast<int64_t>(index_map.size()) != nn * nn) {
        throw ShapeError("relpos index map must have N*N entries");
    }
    const int64_t h = tv.dim(0);
    const int64_t r = tv.dim(1);
    for (int32_t idx : index_map) {
        if (idx < 0 || idx >= r) throw ShapeError("relpos index out of table range");
    }
    Node n;
    n.op = Op::relpos_expand;
    n.in0 = table;
    n.iaux = index_map;
    n.val = Tensor({h, nn, nn});
    for (int64_t hi = 0; hi < h; ++hi) {
        const float* src = tv.data() + hi * r;
        float* dst = n.val.data() + hi * nn * nn;
        for (int64_t ij = 0; ij < nn * nn; ++ij) {
            dst[ij] = src[index_map[static_cast<size_t>(ij)]];
        }
    }
    n.needs_grad = node(table).needs_grad;
    check_finite(n, "relpos_expand");
    return push(std::move(n));
}

Var Tape::gpsa_mix(Var content, Var positional, Var gate) {
    const Tensor& cv = value(content);
    const Tensor& pv = value(positional);
    const Tensor& gv = value(gate);
    if (cv.rank() != 3 || pv.rank() != 3 || gv.rank() != 1) {
        throw ShapeError("gpsa_mix wants (B*H) x T x T, H x N x N, H");
    }
    const int64_t h = gv.dim(0);
    const int64_t t = cv.dim(1);
    const int64_t np = pv.dim(1);
    if (cv.dim(2) != t || pv.dim(0) != h || pv.dim(2) != np || t != np + 1 ||
        cv.dim(0) % h != 0) {
        throw ShapeError("gpsa_mix shapes inconsistent: " + shape_str(cv.shape()) +
                         ", " + shape_str(pv.shape()) + ", " + shape_str(gv.shape()));
    }
    Node n;
    n.op = Op::gpsa_mix;
    n.in0 = content;
    n.in1 = positional;
    n.in2 = gate;
    n.val = Tensor(cv.shape());
    const int64_t bh = cv.dim(0);
    for (int64_t m = 0; m < bh; ++m) {
        const int64_t head = m % h;
        const float g = gv.data()[head];
        const float* c = cv.data() + m * t * t;
        const float* p = pv.data() + head * np * np;
        float* out = n.val.data() + m * t * t;
        // task-token row: content only
        for (int64_t j = 0; j < t; ++j) out[j] = c[j];
        for (int64_t i = 1; i < t; ++i) {
            const float* crow = c + i * t;
            float* orow = out + i * t;
            orow[0] = (1.0f - g) * crow[0];
            const float* prow = p + (i - 1) * np;
            for (int64_t j = 1; j < t; ++j) {
                orow[j] = (1.0f - g) * crow[j] + g * prow[j - 1];
            }
        }
    }
    n.needs_grad = node(content).needs_grad || node(positional).needs_grad ||
                   node(gate).needs_grad;
    check_finite(n, "gpsa_mix");
    return push(std::move(n));
}

Var Tape::split_heads(Var x, int64_t heads) {
    const Tensor& xv = value(x);
    if (xv.rank() != 3 || xv.dim(2) % heads != 0) {
        throw ShapeError("split_heads wants B x T x D with D divisible by heads");
    }
    const int64_t b = xv.dim(0), t = xv.dim(1), d = xv.dim(2) / heads;
    Node n;
    n.op = Op::split_heads;
    n.in0 = x;
    n.i0 = heads;
    n.val = Tensor({b * heads, t, d});
    for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t ti = 0; ti < t; ++ti) {
            const float* src = xv.data() + (bi * t + ti) * heads * d;
            for (int64_t hi = 0; hi < heads; ++hi) {
                float* dst = n.val.data() + ((bi * heads + hi) * t + ti) * d;
                for (int64_t c = 0; c < d; ++c) dst[c] = src[hi * d + c];
            }
        }
    }
    n.needs_grad = node(x).needs_grad;
    return push(std::move(n));
}

Var Tape::merge_heads(Var x, int64_t heads) {
    const Tensor& xv = value(x);
    if (xv.rank() != 3 || xv.dim(0) % heads != 0) {
        throw ShapeError("merge_heads wants (B*H) x T x d");
    }
    const int64_t b = xv.dim(0) / heads, t = xv.dim(1), d = xv.dim(2);
    Node n;
    n.op = Op::merge_heads;
    n.in0 = x;
    n.i0 = heads;
    n.val = Tensor({b, t, heads * d});
    for (int64_t bi = 0; bi < b; ++bi) {
        for (int64_t ti = 0; ti < t; ++ti) {
            float* dst = n.val.data() + (bi * t + ti) * heads * d;
            for (int64_t hi = 0; hi < heads; ++hi) {
                const float* src = xv.data() + ((bi * heads + hi) * t + ti) * d;
                for (int64_t c = 0; c < d; ++c) dst[hi * d + c] = src[c];
            }
        }
    }
    n.needs_grad = node(x).needs_grad;
    return push(std::move(n));
}

Var Tape::prepend_row(Var x, Var row) {
    const Tensor& xv = value(x);
    const Tensor& rv = value(row);
    if (xv.rank() != 3 || rv.rank() != 1 || rv.dim(0) != xv.dim(2)) {
        throw ShapeError("prepend_row wants B x N x D and a D row");
    }
    const int64_t b = xv.dim(0), np = xv.dim(1), d = xv.dim(2);
    Node n;
    n.op = Op::prepend_row;
    n.in0 = x;
    n.in1 = row;
    n.val = Tensor({b, np + 1, d});
    for (int64_t bi = 0; bi < b; ++bi) {
        float* dst = n.val.data() + bi * (np + 1) * d;
        for (int64_t c = 0; c < d; ++c) dst[c] = rv.data()[c];
        const float* src = xv.data() + bi * np * d;
        for (int64_t i = 0; i < np * d; ++i) dst[d + i] = src[i];
    }
    n.needs_grad = node(x).needs_grad || node(row).needs_grad;
    return push(std::move(n));
}

Var Tape::take_row0(Var x) {
    const Tensor& xv = value(x);
    if (xv.rank() != 3) throw ShapeError("take_row0 wants B x T x D");
    const int64_t b = xv.dim(0), t = xv.dim(1), d = xv.dim(2);
    Node n;
    n.op = Op::take_row0;
    n.in0 = x;
    n.val = Tensor({b, d});
    for (int64_t bi = 0; bi < b; ++bi) {
        const float* src = xv.data() + bi * t * d;
        float* dst = n.val.data() + bi * d;
        for (int64_t c = 0; c < d; ++c) dst[c] = src[c];
    }
    n.needs_grad = node(x).needs_grad;
    return push(std::move(n));
}

namespace {

// Shared log-sum-exp helper; probs written as float, lse returned in double.
double row_lse(const float* row, int64_t k, float* probs) {
    float mx = row[0];
    for (int64_t i = 1; i < k; ++i) mx = std::max(mx, row[i]);
    double denom = 0.0;
    for (int64_t i = 0; i < k; ++i) {
        denom += std::exp(static_cast<double>(row[i]) - static_cast<double>(mx));
    }
    const double lse = static_cast<double>(mx) + std::log(denom);
    for (int64_t i = 0; i < k; ++i) {
        probs[i] = static_cast<float>(std::exp(static_cast<double>(row[i]) - lse));
    }
    return lse;
}

} // namespace

Var Tape::cross_entropy(Var logits, const std::vector<int32_t>& labels) {
    const Tensor& lv = value(logits);
    if (lv.rank() != 2) throw ShapeError("cross_entropy wants B x K logits");
    const int64_t b = lv.dim(0), k = lv.dim(1);
    if (static_cast<int64_t>(labels.size()) != b) {
        throw ShapeError("cross_entropy label count differs from batch");
    }
    for (int32_t l : labels) {
        if (l < 0 || l >= k) throw Error("cross_entropy label out of range");
    }
    Node n;
    n.op = Op::cross_entropy;
    n.in0 = logits;
    n.iaux = labels;
    n.aux.resize(static_cast<size_t>(b * k)); // softmax probs for backward
    double total = 0.0;
    for (int64_t r = 0; r < b; ++r) {
        const float* row = lv.data() + r * k;
        const double lse = row_lse(row, k, n.aux.data() + r * k);
        total += lse - static_cast<double>(row[labels[static_cast<size_t>(r)]]);
    }
    n.precise = total / static_cast<double>(b);
    n.val = Tensor::scalar(static_cast<float>(n.precise));
    n.needs_grad = node(logits).needs_grad;
    check_finite(n, "cross_entropy");
    return push(std::move(n));
}

Var Tape::cross_entropy(Var logits, const Tensor& soft_targets) {
    const Tensor& lv = value(logits);
    if (lv.rank() != 2) throw ShapeError("cross_entropy wants B x K logits");
    if (!lv.same_shape(soft_targets)) {
        throw ShapeError("soft targets shape differs from logits");
    }
    const int64_t b = lv.dim(0), k = lv.dim(1);
    for (int64_t r = 0; r < b; ++r) {
        const double s = kern::vsum(k, soft_targets.data() + r * k);
        if (std::abs(s - 1.0) > 1e-3) {
            throw NumericError("soft target row does not sum to 1");
        }
    }
    Node n;
    n.op = Op::cross_entropy;
    n.in0 = logits;
    n.flag = true;
    n.aux.resize(static_cast<size_t>(2 * b * k)); // probs then targets
    double total = 0.0;
    for (int64_t r = 0; r < b; ++r) {
        const float* row = lv.data() + r * k;
        const float* tgt = soft_targets.data() + r * k;
        const double lse = row_lse(row, k, n.aux.data() + r * k);
        double dot = 0.0;
        for (int64_t c = 0; c < k; ++c) {
            dot += static_cast<double>(tgt[c]) * static_cast<double>(row[c]);
        }
        total += lse - dot;
        for (int64_t c = 0; c < k; ++c) n.aux[static_cast<size_t>((b + r) * k + c)] = tgt[c];
    }
    n.precise = total / static_cast<double>(b);
    n.val = Tensor::scalar(static_cast<float>(n.precise));
    n.needs_grad = node(logits).needs_grad;
    check_finite(n, "cross_entropy");
    return push(std::move(n));
}

Var Tape::feature_distance(Var u, Var v, bool squared) {
    const Tensor& uv = value(u);
    const Tensor& vv = value(v);
    if (!uv.same_shape(vv)) {
        throw ShapeError("feature_distance shapes differ: " + shape_str(uv.shape()) +
                         " vs " + shape_str(vv.shape()));
    }
    const int64_t d = uv.dim(uv.rank() - 1);
    const int64_t b = uv.numel() / d;
    Node n;
    n.op = Op::feature_distance;
    n.in0 = u;
    n.in1 = v;
    n.flag = squared;
    n.daux.resize(static_cast<size_t>(b)); // per-row norms
    double total = 0.0;
    for (int64_t r = 0; r < b; ++r) {
        const float* urow = uv.data() + r * d;
        const float* vrow = vv.data() + r * d;
        double sq = 0.0;
        for (int64_t c = 0; c < d; ++c) {
            const double diff = static_cast<double>(urow[c]) - static_cast<double>(vrow[c]);
            sq += diff * diff;
        }
        const double nrm = std::sqrt(sq);
        n.daux[static_cast<size_t>(r)] = nrm;
        total += squared ? sq : nrm;
    }
    n.precise = total / static_cast<double>(b);
    n.val = Tensor::scalar(static_cast<float>(n.precise));
    n.needs_grad = node(u).needs_grad || node(v).needs_grad;
    check_finite(n, "feature_distance");
    return push(std::move(n));
}

// ---------------------------------------------------------------------------
// backward

void Tape::backward(Var loss) {
    check(loss);
    if (consumed_) throw StateError("tape already consumed by backward; clear() first");
    Node& ln = node(loss);
    if (val_of(ln).numel() != 1) throw ShapeError("backward on non-scalar loss");
    consumed_ = true;
    if (!ln.needs_grad) return; // constant graph: all leaf gradients stay absent
    float* seed = grad_buffer(loss);
    seed[0] += 1.0f;
    for (Var i = loss; i >= 0; --i) {
        Node& n = node(i);
        if (!n.needs_grad || n.op == Op::leaf) continue;
        if (n.op != Op::leaf && n.grad.empty()) continue; // no downstream use
        backward_node(i);
    }
}

void Tape::backward_node(Var idx) {
    Node& n = node(idx);
    const float* dy = n.grad.data();

    switch (n.op) {
    case Op::matmul: {
        const Tensor& a = value(n.in0);
        const Tensor& w = value(n.in1);
        const int64_t k = a.dim(a.rank() - 1);
        const int64_t m = fold_rows(a.shape());
        const int64_t nn = w.dim(1);
        if (float* da = grad_buffer(n.in0)) {
            kern::gemm(false, true, m, k, nn, 1.0f, dy, nn, w.data(), nn, 1.0f, da, k);
        }
        if (float* dw = grad_buffer(n.in1)) {
            kern::gemm(true, false, k, nn, m, 1.0f, a.data(), k, dy, nn, 1.0f, dw, nn);
        }
        break;
    }
    case Op::bmm: {
        const Tensor& a = value(n.in0);
        const Tensor& b = value(n.in1);
        const bool ta = (n.i0 & 1) != 0;
        const bool tb = (n.i0 & 2) != 0;
        const float alpha = n.f0;
        const int64_t g = a.dim(0);
        const int64_t m = ta ? a.dim(2) : a.dim(1);
        const int64_t k = ta ? a.dim(1) : a.dim(2);
        const int64_t nn = tb ? b.dim(1) : b.dim(2);
        const int64_t a_sz = a.dim(1) * a.dim(2);
        const int64_t b_sz = b.dim(1) * b.dim(2);
        float* da = grad_buffer(n.in0);
        float* db = grad_buffer(n.in1);
        for (int64_t gi = 0; gi < g; ++gi) {
            const float* ag = a.data() + gi * a_sz;
            const float* bg = b.data() + gi * b_sz;
            const float* dyg = dy + gi * m * nn;
            if (da) {
                float* dag = da + gi * a_sz;
                if (!ta) {
                    // dA = alpha * dC * op(B)^T
                    kern::gemm(false, !tb, m, k, nn, alpha, dyg, nn, bg, b.dim(2), 1.0f, dag, k);
                } else {
                    // stored A is k x m: dA_stored = alpha * op(B) * dC^T
                    kern::gemm(tb, true, k, m, nn, alpha, bg, b.dim(2), dyg, nn, 1.0f, dag, m);
                }
            }
            if (db) {
                float* dbg = db + gi * b_sz;
                if (!tb) {
                    // dB = alpha * op(A)^T * dC
                    kern::gemm(!ta, false, k, nn, m, alpha, ag, a.dim(2), dyg, nn, 1.0f, dbg, nn);
                } else {
                    // stored B is n x k: dB_stored = alpha * dC^T * op(A)
                    kern::gemm(true, ta, nn, k, m, alpha, dyg, nn, ag, a.dim(2), 1.0f, dbg, k);
                }
            }
        }
        break;
    }
    case Op::add: {
        const int64_t nel = n.val.numel();
        if (float* da = grad_buffer(n.in0)) kern::axpy(nel, 1.0f, dy, da);
        if (float* db = grad_buffer(n.in1)) kern::axpy(nel, 1.0f, dy, db);
        break;
    }
    case Op::add_bias: {
        const int64_t d = value(n.in1).dim(0);
        const int64_t rows = n.val.numel() / d;
        if (float* dx = grad_buffer(n.in0)) kern::axpy(n.val.numel(), 1.0f, dy, dx);
        if (float* db = grad_buffer(n.in1)) {
            for (int64_t j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int64_t r = 0; r < rows; ++r) acc += static_cast<double>(dy[r * d + j]);
                db[j] = static_cast<float>(static_cast<double>(db[j]) + acc);
            }
        }
        break;
    }
    case Op::scale: {
        if (float* dx = grad_buffer(n.in0)) kern::axpy(n.val.numel(), n.f0, dy, dx);
        break;
    }
    case Op::mul: {
        const Tensor& a = value(n.in0);
        const Tensor& b = value(n.in1);
        if (float* da = grad_buffer(n.in0)) {
            for (int64_t i = 0; i < n.val.numel(); ++i) da[i] += dy[i] * b.data()[i];
        }
        if (float* db = grad_buffer(n.in1)) {
            for (int64_t i = 0; i < n.val.numel(); ++i) db[i] += dy[i] * a.data()[i];
        }
        break;
    }
    case Op::sum: {
        if (float* dx = grad_buffer(n.in0)) {
            const int64_t nel = value(n.in0).numel();
            for (int64_t i = 0; i < nel; ++i) dx[i] += dy[0];
        }
        break;
    }
    case Op::softmax: {
        float* dx = grad_buffer(n.in0);
        if (!dx) break;
        const Tensor& y = n.val;
        const int64_t axis = n.i0;
        const int64_t len = y.dim(axis);
        int64_t inner = 1;
        for (int64_t i = axis + 1; i < y.rank(); ++i) inner *= y.dim(i);
        const int64_t outer = y.numel() / (len * inner);
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t in = 0; in < inner; ++in) {
                const float* yr = y.data() + o * len * inner + in;
                const float* dr = dy + o * len * inner + in;
                float* xr = dx + o * len * inner + in;
                double dot = 0.0;
                for (int64_t i = 0; i < len; ++i) {
                    dot += static_cast<double>(dr[i * inner]) * static_cast<double>(yr[i * inner]);
                }
                for (int64_t i = 0; i < len; ++i) {
                    xr[i * inner] += static_cast<float>(
                        static_cast<double>(yr[i * inner]) *
                        (static_cast<double>(dr[i * inner]) - dot));
                }
            }
        }
        break;
    }
    case Op::layer_norm: {
        const Tensor& x = value(n.in0);
        const Tensor& g = value(n.in1);
        const int64_t d = g.dim(0);
        const int64_t rows = x.numel() / d;
        float* dx = grad_buffer(n.in0);
        float* dg = grad_buffer(n.in1);
        float* db = grad_buffer(n.in2);
        std::vector<double> dg_acc, db_acc;
        if (dg) dg_acc.assign(static_cast<size_t>(d), 0.0);
        if (db) db_acc.assign(static_cast<size_t>(d), 0.0);
        for (int64_t r = 0; r < rows; ++r) {
            const float* xr = x.data() + r * d;
            const float* dr = dy + r * d;
            const double mean = n.daux[static_cast<size_t>(r) * 2];
            const double invstd = n.daux[static_cast<size_t>(r) * 2 + 1];
            double m1 = 0.0, m2 = 0.0;
            for (int64_t i = 0; i < d; ++i) {
                const double xhat = (static_cast<double>(xr[i]) - mean) * invstd;
                const double h = static_cast<double>(dr[i]) * static_cast<double>(g.data()[i]);
                m1 += h;
                m2 += h * xhat;
                if (dg) dg_acc[static_cast<size_t>(i)] += static_cast<double>(dr[i]) * xhat;
                if (db) db_acc[static_cast<size_t>(i)] += static_cast<double>(dr[i]);
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            if (dx) {
                float* xo = dx + r * d;
                for (int64_t i = 0; i < d; ++i) {
                    const double xhat = (static_cast<double>(xr[i]) - mean) * invstd;
                    const double h = static_cast<double>(dr[i]) * static_cast<double>(g.data()[i]);
                    xo[i] += static_cast<float>(invstd * (h - m1 - xhat * m2));
                }
            }
        }
        for (int64_t i = 0; i < d; ++i) {
            if (dg) dg[i] = static_cast<float>(static_cast<double>(dg[i]) + dg_acc[static_cast<size_t>(i)]);
            if (db) db[i] = static_cast<float>(static_cast<double>(db[i]) + db_acc[static_cast<size_t>(i)]);
        }
        break;
    }
    case Op::gelu: {
        float* dx = grad_buffer(n.in0);
        if (!dx) break;
        const Tensor& x = value(n.in0);
        for (int64_t i = 0; i < x.numel(); ++i) {
            const double v = x.data()[i];
            dx[i] += static_cast<float>(static_cast<double>(dy[i]) *
                                        (phi_cdf(v) + v * phi_pdf(v)));
        }
        break;
    }
    case Op::sigmoid: {
        float* dx = grad_buffer(n.in0);
        if (!dx) break;
        for (int64_t i = 0; i < n.val.numel(); ++i) {
            const double s = n.val.data()[i];
            dx[i] += static_cast<float>(static_cast<double>(dy[i]) * s * (1.0 - s));
        }
        break;
    }
    case Op::relpos_expand: {
        float* dt = grad_buffer(n.in0);
        if (!dt) break;
        const int64_t h = value(n.in0).dim(0);
        const int64_t r = value(n.in0).dim(1);
        const int64_t cells = static_cast<int64_t>(n.iaux.size());
        for (int64_t hi = 0; hi < h; ++hi) {
            const float* dyh = dy + hi * cells;
            float* dth = dt + hi * r;
            for (int64_t ij = 0; ij < cells; ++ij) {
                dth[n.iaux[static_cast<size_t>(ij)]] += dyh[ij];
            }
        }
        break;
    }
    case Op::gpsa_mix: {
        const Tensor& c = value(n.in0);
        const Tensor& p = value(n.in1);
        const Tensor& g = value(n.in2);
        const int64_t h = g.dim(0);
        const int64_t t = c.dim(1);
        const int64_t np = t - 1;
        const int64_t bh = c.dim(0);
        float* dc = grad_buffer(n.in0);
        float* dp = grad_buffer(n.in1);
        float* dgate = grad_buffer(n.in2);
        std::vector<double> dg_acc;
        if (dgate) dg_acc.assign(static_cast<size_t>(h), 0.0);
        for (int64_t m = 0; m < bh; ++m) {
            const int64_t head = m % h;
            const float gv = g.data()[head];
            const float* dm = dy + m * t * t;
            const float* cm = c.data() + m * t * t;
            const float* pm = p.data() + head * np * np;
            if (dc) {
                float* dcm = dc + m * t * t;
                for (int64_t j = 0; j < t; ++j) dcm[j] += dm[j];
                for (int64_t i = 1; i < t; ++i) {
                    for (int64_t j = 0; j < t; ++j) {
                        dcm[i * t + j] += (1.0f - gv) * dm[i * t + j];
                    }
                }
            }
            if (dp) {
                float* dpm = dp + head * np * np;
                for (int64_t i = 1; i < t; ++i) {
                    for (int64_t j = 1; j < t; ++j) {
                        dpm[(i - 1) * np + (j - 1)] += gv * dm[i * t + j];
                    }
                }
            }
            if (dgate) {
                double acc = 0.0;
                for (int64_t i = 1; i < t; ++i) {
                    acc -= static_cast<double>(dm[i * t]) * static_cast<double>(cm[i * t]);
                    for (int64_t j = 1; j < t; ++j) {
                        const double pe = pm[(i - 1) * np + (j - 1)];
                        const double ce = cm[i * t + j];
                        acc += static_cast<double>(dm[i * t + j]) * (pe - ce);
                    }
                }
                dg_acc[static_cast<size_t>(head)] += acc;
            }
        }
        if (dgate) {
            for (int64_t hi = 0; hi < h; ++hi) {
                dgate[hi] = static_cast<float>(static_cast<double>(dgate[hi]) +
                                               dg_acc[static_cast<size_t>(hi)]);
            }
        }
        break;
    }
    case Op::split_heads: {
        float* dx = grad_buffer(n.in0);
        if (!dx) break;
        const Tensor& x = value(n.in0);
        const int64_t heads = n.i0;
        const int64_t b = x.dim(0), t = x.dim(1), d = x.dim(2) / heads;
        for (int64_t bi = 0; bi < b; ++bi) {
            for (int64_t ti = 0; ti < t; ++ti) {
                float* dst = dx + (bi * t + ti) * heads * d;
                for (int64_t hi = 0; hi < heads; ++hi) {
                    const float* src = dy + ((bi * heads + hi) * t + ti) * d;
                    for (int64_t cc = 0; cc < d; ++cc) dst[hi * d + cc] += src[cc];
                }
            }
        }
        break;
    }
    case Op::merge_heads: {
        float* dx = grad_buffer(n.in0);
        if (!dx) break;
        const int64_t heads = n.i0;
        const int64_t b = n.val.dim(0), t = n.val.dim(1), d = n.val.dim(2) / heads;
        for (int64_t bi = 0; bi < b; ++bi) {
            for (int64_t ti = 0; ti < t; ++ti) {
                const float* src = dy + (bi * t + ti) * heads * d;
                for (int64_t hi = 0; hi < heads; ++hi) {
                    float* dst = dx + ((bi * heads + hi) * t + ti) * d;
                    for (int64_t cc = 0; cc < d; ++cc) dst[cc] += src[hi * d + cc];
                }
            }
        }
        break;
    }
    case Op::prepend_row: {
        const int64_t b = n.val.dim(0);
        const int64_t t = n.val.dim(1);
        const int64_t d = n.val.dim(2);
        if (float* dx = grad_buffer(n.in0)) {
            for (int64_t bi = 0; bi < b; ++bi) {
                kern::axpy((t - 1) * d, 1.0f, dy + bi * t * d + d, dx + bi * (t - 1) * d);
            }
        }
        if (float* drow = grad_buffer(n.in1)) {
            for (int64_t c = 0; c < d; ++c) {
                double acc = 0.0;
                for (int64_t bi = 0; bi < b; ++bi) {
                    acc += static_cast<double>(dy[bi * t * d + c]);
                }
                drow[c] = static_cast<float>(static_cast<double>(drow[c]) + acc);
            }
        }
        break;
    }
    case Op::take_row0: {
        float* dx = grad_buffer(n.in0);
        if (!dx) break;
        const Tensor& x = value(n.in0);
        const int64_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
        for (int64_t bi = 0; bi < b; ++bi) {
            kern::axpy(d, 1.0f, dy + bi * d, dx + bi * t * d);
        }
        break;
    }
    case Op::cross_entropy: {
        float* dl = grad_buffer(n.in0);
        if (!dl) break;
        const Tensor& l = value(n.in0);
        const int64_t b = l.dim(0), k = l.dim(1);
        const float scale_g = dy[0] / static_cast<float>(b);
        for (int64_t r = 0; r < b; ++r) {
            const float* probs = n.aux.data() + r * k;
            float* out = dl + r * k;
            if (!n.flag) {
                const int32_t lbl = n.iaux[static_cast<size_t>(r)];
                for (int64_t c = 0; c < k; ++c) {
                    const float t = (c == lbl) ? 1.0f : 0.0f;
                    out[c] += scale_g * (probs[c] - t);
                }
            } else {
                const float* tgt = n.aux.data() + (b + r) * k;
                for (int64_t c = 0; c < k; ++c) {
                    out[c] += scale_g * (probs[c] - tgt[c]);
                }
            }
        }
        break;
    }
    case Op::feature_distance: {
        const Tensor& u = value(n.in0);
        const Tensor& v = value(n.in1);
        const int64_t d = u.dim(u.rank() - 1);
        const int64_t b = u.numel() / d;
        float* du = grad_buffer(n.in0);
        float* dvv = grad_buffer(n.in1);
        const double gb = static_cast<double>(dy[0]) / static_cast<double>(b);
        for (int64_t r = 0; r < b; ++r) {
            const double nrm = n.daux[static_cast<size_t>(r)];
            double coef;
            if (n.flag) {
                coef = 2.0 * gb;
            } else {
                if (nrm == 0.0) continue; // subgradient 0 at the exact minimum
                coef = gb / nrm;
            }
            const float* ur = u.data() + r * d;
            const float* vr = v.data() + r * d;
            for (int64_t c = 0; c < d; ++c) {
                const double diff = static_cast<double>(ur[c]) - static_cast<double>(vr[c]);
                if (du) du[r * d + c] += static_cast<float>(coef * diff);
                if (dvv) dvv[r * d + c] -= static_cast<float>(coef * diff);
            }
        }
        break;
    }
    case Op::leaf:
        break;
    }
}

} // namespace ticl
