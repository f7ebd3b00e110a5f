#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "ticl/tensor.hpp"

namespace ticl {

using Var = int32_t;

/// Reverse-mode tape. Operations append records in execution order; backward
/// walks them strictly in reverse and accumulates gradients (by summation)
/// into every trainable parameter leaf. One tape per training context; after
/// backward the tape must be clear()ed before it records again.
///
/// Every forward result is checked for non-finite values and throws
/// NumericError instead of propagating NaN.
class Tape {
public:
    /// Constant input; the tensor is copied, no gradient flows.
    Var leaf(const Tensor& t);

    /// Parameter leaf. Gradients accumulate into p.tensor.grad unless the
    /// parameter is frozen or does not require gradients.
    Var leaf(Parameter& p);

    /// Parameter leaf for evaluation: reads the same storage, never grads.
    Var leaf(const Parameter& p);

    /// (...) x K times K x N; leading dimensions are folded.
    Var matmul(Var a, Var w);

    /// Batched matmul: G x M x K times G x K x N (trans flags swap the
    /// stored layout of either operand); result is alpha * op(A) * op(B).
    Var bmm(Var a, Var b, bool ta, bool tb, float alpha = 1.0f);

    Var add(Var a, Var b);               // same shape
    Var add_bias(Var x, Var bias);       // bias broadcast over the last axis
    Var scale(Var x, float c);
    Var mul(Var a, Var b);               // elementwise
    Var sum(Var x);                      // -> scalar

    Var softmax(Var x, int64_t axis);
    Var layer_norm(Var x, Var gamma, Var beta, float eps);
    Var gelu(Var x);                     // exact erf form
    Var sigmoid(Var x);

    /// H x R score table -> H x N x N score grid via a relative-offset index
    /// map (row-major N*N ints into [0, R)).
    Var relpos_expand(Var table, const std::vector<int32_t>& index_map, int64_t n);

    /// Per-head gated blend of content attention (B*H) x T x T with
    /// batch-shared positional attention H x N x N, T == N + 1. Row 0 keeps
    /// the content branch at full weight; rows >= 1 mix with gate g per head,
    /// with the positional branch supported on patch columns only.
    Var gpsa_mix(Var content, Var positional, Var gate);

    Var split_heads(Var x, int64_t heads);  // B x T x D -> (B*H) x T x (D/H)
    Var merge_heads(Var x, int64_t heads);  // (B*H) x T x d -> B x T x (H*d)
    Var prepend_row(Var x, Var row);        // B x N x D + D -> B x (N+1) x D
    Var take_row0(Var x);                   // B x T x D -> B x D

    /// Mean over the batch of -log softmax(logits)[label].
    Var cross_entropy(Var logits, const std::vector<int32_t>& labels);
    /// Soft-target form; rows of targets must sum to 1.
    Var cross_entropy(Var logits, const Tensor& soft_targets);

    /// Mean over rows of ||u_b - v_b||_2 (or its square). Rank-1 inputs are
    /// treated as a single row.
    Var feature_distance(Var u, Var v, bool squared = false);

    const Tensor& value(Var v) const;
    float scalar(Var v) const;
    /// 64-bit value of a scalar result, carried through scalar ops.
    double precise(Var v) const;

    void backward(Var loss);
    void clear();
    size_t size() const { return nodes_.size(); }

private:
    enum class Op : uint8_t {
        leaf, matmul, bmm, add, add_bias, scale, mul, sum,
        softmax, layer_norm, gelu, sigmoid,
        relpos_expand, gpsa_mix, split_heads, merge_heads,
        prepend_row, take_row0, cross_entropy, feature_distance,
    };

    struct Node {
        Op op;
        Var in0 = -1, in1 = -1, in2 = -1;
        Tensor val;                  // result (leaves: copy or unused)
        const Tensor* ext = nullptr; // parameter leaf value
        Tensor* sink = nullptr;      // parameter leaf gradient target
        std::vector<float> grad;     // lazily allocated
        bool needs_grad = false;

        std::vector<float> aux;      // op context (probs, ...)
        std::vector<double> daux;    // op context needing 64-bit (means, norms)
        std::vector<int32_t> iaux;   // labels / index maps
        float f0 = 0.0f;             // scale constant / eps / alpha
        int64_t i0 = 0;              // axis / head count / flags
        double precise = 0.0;
        bool flag = false;           // squared distance / soft targets
    };

    Node& node(Var v) { return nodes_[static_cast<size_t>(v)]; }
    const Node& node(Var v) const { return nodes_[static_cast<size_t>(v)]; }
    const Tensor& val_of(const Node& n) const { return n.ext ? *n.ext : n.val; }

    Var push(Node&& n);
    Var check(Var v) const;
    float* grad_buffer(Var v);           // nullptr when no gradient is needed
    void check_finite(const Node& n, const char* op_name) const;

    void backward_node(Var idx);

    // deque keeps value() references stable while later ops append nodes
    std::deque<Node> nodes_;
    bool consumed_ = false;
};

} // namespace ticl
