#include "ticl/encoder.hpp"

#include <cmath>

#include "ticl/common.hpp"

namespace ticl {

void EncoderConfig::validate() const {
    if (image_side <= 0 || channels <= 0 || patch_size <= 0 || embed_dim <= 0 ||
        heads <= 0 || depth < 1 || mlp_ratio < 1) {
        throw ConfigError("encoder config fields must be positive");
    }
    if (image_side % patch_size != 0) {
        throw ConfigError("image side must be divisible by patch size");
    }
    if (embed_dim % heads != 0) {
        throw ConfigError("embed dim must be divisible by head count");
    }
}

EncoderConfig EncoderConfig::desk() {
    return EncoderConfig{};
}

EncoderConfig EncoderConfig::paper() {
    EncoderConfig c;
    c.image_side = 32;
    c.embed_dim = 192;
    c.heads = 12;
    c.depth = 6;
    return c;
}

Tensor patchify(const Tensor& image, int64_t patch_size) {
    if (image.rank() != 3) throw ShapeError("patchify wants a C x S x S image");
    Tensor batch(Shape{1, image.dim(0), image.dim(1), image.dim(2)}, image.values);
    Tensor out = patchify_batch(batch, patch_size);
    return Tensor(Shape{out.dim(1), out.dim(2)}, std::move(out.values));
}

Tensor patchify_batch(const Tensor& images, int64_t patch_size) {
    if (images.rank() != 4) throw ShapeError("patchify_batch wants B x C x S x S");
    const int64_t b = images.dim(0), c = images.dim(1), s = images.dim(2);
    if (images.dim(3) != s) throw ShapeError("patchify expects square images");
    if (s % patch_size != 0) {
        throw ShapeError("image side not divisible by patch size");
    }
    const int64_t g = s / patch_size;
    const int64_t n = g * g;
    const int64_t pd = patch_size * patch_size * c;
    Tensor out({b, n, pd});
    for (int64_t bi = 0; bi < b; ++bi) {
        const float* img = images.data() + bi * c * s * s;
        for (int64_t gr = 0; gr < g; ++gr) {
            for (int64_t gc = 0; gc < g; ++gc) {
                float* row = out.data() + (bi * n + gr * g + gc) * pd;
                int64_t w = 0;
                for (int64_t ch = 0; ch < c; ++ch) {
                    for (int64_t pr = 0; pr < patch_size; ++pr) {
                        const float* src =
                            img + ch * s * s + (gr * patch_size + pr) * s + gc * patch_size;
                        for (int64_t pc = 0; pc < patch_size; ++pc) row[w++] = src[pc];
                    }
                }
            }
        }
    }
    return out;
}

int FeatureExtractor::add_param(const std::string& name, Tensor t) {
    t.requires_grad = true;
    params_.push_back(Parameter{std::move(t), name, false});
    return static_cast<int>(params_.size() - 1);
}

FeatureExtractor::FeatureExtractor(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    const int64_t d = cfg_.embed_dim;
    const int64_t hd = cfg_.mlp_ratio * d;
    const float ws = 0.02f;

    patch_w_ = add_param("fe.patch.w", Tensor::randn({cfg_.patch_dim(), d}, rng, ws));
    patch_b_ = add_param("fe.patch.b", Tensor::zeros({d}));

    blocks_.resize(static_cast<size_t>(cfg_.depth));
    for (int64_t l = 0; l < cfg_.depth; ++l) {
        const std::string pre = "fe.block" + std::to_string(l) + ".";
        BlockRefs& b = blocks_[static_cast<size_t>(l)];
        b.ln1_g = add_param(pre + "ln1.g", Tensor::full({d}, 1.0f));
        b.ln1_b = add_param(pre + "ln1.b", Tensor::zeros({d}));
        b.wq = add_param(pre + "attn.wq", Tensor::randn({d, d}, rng, ws));
        b.bq = add_param(pre + "attn.bq", Tensor::zeros({d}));
        b.wk = add_param(pre + "attn.wk", Tensor::randn({d, d}, rng, ws));
        b.bk = add_param(pre + "attn.bk", Tensor::zeros({d}));
        b.wv = add_param(pre + "attn.wv", Tensor::randn({d, d}, rng, ws));
        b.bv = add_param(pre + "attn.bv", Tensor::zeros({d}));
        b.pos = add_param(pre + "attn.pos",
                          Tensor::randn({cfg_.heads, cfg_.rel_offset_count()}, rng, ws));
        b.gate = add_param(pre + "attn.gate", Tensor::full({cfg_.heads}, 1.0f));
        b.wo = add_param(pre + "attn.wo", Tensor::randn({d, d}, rng, ws));
        b.bo = add_param(pre + "attn.bo", Tensor::zeros({d}));
        b.ln2_g = add_param(pre + "ln2.g", Tensor::full({d}, 1.0f));
        b.ln2_b = add_param(pre + "ln2.b", Tensor::zeros({d}));
        b.w1 = add_param(pre + "mlp.w1", Tensor::randn({d, hd}, rng, ws));
        b.b1 = add_param(pre + "mlp.b1", Tensor::zeros({hd}));
        b.w2 = add_param(pre + "mlp.w2", Tensor::randn({hd, d}, rng, ws));
        b.b2 = add_param(pre + "mlp.b2", Tensor::zeros({d}));
    }
    final_g_ = add_param("fe.final_ln.g", Tensor::full({d}, 1.0f));
    final_b_ = add_param("fe.final_ln.b", Tensor::zeros({d}));

    // relative-offset index: patches i, j at grid positions (ri, ci), (rj, cj)
    // share a score slot keyed by (rj - ri, cj - ci)
    const int64_t g = cfg_.grid();
    const int64_t span = 2 * g - 1;
    rel_index_map_.resize(static_cast<size_t>(cfg_.patch_count() * cfg_.patch_count()));
    for (int64_t i = 0; i < cfg_.patch_count(); ++i) {
        for (int64_t j = 0; j < cfg_.patch_count(); ++j) {
            const int64_t dr = (j / g) - (i / g) + (g - 1);
            const int64_t dc = (j % g) - (i % g) + (g - 1);
            rel_index_map_[static_cast<size_t>(i * cfg_.patch_count() + j)] =
                static_cast<int32_t>(dr * span + dc);
        }
    }
}

std::vector<Parameter*> FeatureExtractor::parameters() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (Parameter& p : params_) out.push_back(&p);
    return out;
}

std::vector<const Parameter*> FeatureExtractor::parameters() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (const Parameter& p : params_) out.push_back(&p);
    return out;
}

Parameter& FeatureExtractor::param(const std::string& name) {
    for (Parameter& p : params_) {
        if (p.name == name) return p;
    }
    throw ConfigError("unknown parameter " + name);
}

const Parameter& FeatureExtractor::param(const std::string& name) const {
    for (const Parameter& p : params_) {
        if (p.name == name) return p;
    }
    throw ConfigError("unknown parameter " + name);
}

void FeatureExtractor::freeze_all() {
    for (Parameter& p : params_) p.frozen = true;
}

void FeatureExtractor::set_requires_grad(bool on) {
    for (Parameter& p : params_) p.tensor.requires_grad = on;
}

Var FeatureExtractor::build_embedding(Tape& tape, Var patches, Var token_leaf) const {
    Var emb = tape.add_bias(tape.matmul(patches, tape.leaf(params_[patch_w_])),
                            tape.leaf(params_[patch_b_]));
    return tape.prepend_row(emb, token_leaf);
}

template <typename Self, typename TokenRef>
Var FeatureExtractor::build_impl(Self& self, Tape& tape, Var patches, TokenRef& token) {
    const EncoderConfig& cfg = self.cfg_;
    auto P = [&](int idx) { return tape.leaf(self.params_[static_cast<size_t>(idx)]); };

    Var emb = tape.add_bias(tape.matmul(patches, P(self.patch_w_)), P(self.patch_b_));
    Var z = tape.prepend_row(emb, tape.leaf(token));

    const float inv_sqrt_hd = 1.0f / std::sqrt(static_cast<float>(cfg.head_dim()));
    for (const BlockRefs& b : self.blocks_) {
        Var h = tape.layer_norm(z, P(b.ln1_g), P(b.ln1_b), cfg.ln_eps);
        Var q = tape.split_heads(tape.add_bias(tape.matmul(h, P(b.wq)), P(b.bq)), cfg.heads);
        Var k = tape.split_heads(tape.add_bias(tape.matmul(h, P(b.wk)), P(b.bk)), cfg.heads);
        Var v = tape.split_heads(tape.add_bias(tape.matmul(h, P(b.wv)), P(b.bv)), cfg.heads);
        Var scores = tape.bmm(q, k, false, true, inv_sqrt_hd);
        Var content = tape.softmax(scores, 2);
        Var pos = tape.softmax(
            tape.relpos_expand(P(b.pos), self.rel_index_map_, cfg.patch_count()), 2);
        Var gate = tape.sigmoid(P(b.gate));
        Var attn = tape.gpsa_mix(content, pos, gate);
        Var ctx = tape.merge_heads(tape.bmm(attn, v, false, false), cfg.heads);
        Var o = tape.add_bias(tape.matmul(ctx, P(b.wo)), P(b.bo));
        z = tape.add(z, o);

        Var h2 = tape.layer_norm(z, P(b.ln2_g), P(b.ln2_b), cfg.ln_eps);
        Var m = tape.gelu(tape.add_bias(tape.matmul(h2, P(b.w1)), P(b.b1)));
        Var m2 = tape.add_bias(tape.matmul(m, P(b.w2)), P(b.b2));
        z = tape.add(z, m2);
    }
    Var zf = tape.layer_norm(z, P(self.final_g_), P(self.final_b_), cfg.ln_eps);
    return tape.take_row0(zf);
}

Var FeatureExtractor::build(Tape& tape, Var patches, Parameter& token) {
    return build_impl(*this, tape, patches, token);
}

Var FeatureExtractor::build(Tape& tape, Var patches, const Parameter& token) const {
    return build_impl(*this, tape, patches, token);
}

Tensor extract_features(const FeatureExtractor& fe, const Tensor& images,
                        const Parameter& token) {
    if (images.rank() != 4) throw ShapeError("extract_features wants B x C x S x S");
    if (images.dim(1) != fe.config().channels || images.dim(2) != fe.config().image_side ||
        images.dim(3) != fe.config().image_side) {
        throw ShapeError("image dimensions do not match the encoder config");
    }
    if (token.tensor.rank() != 1 || token.tensor.dim(0) != fe.config().embed_dim) {
        throw ShapeError("token dimension does not match the encoder config");
    }
    Tape tape;
    Var patches = tape.leaf(patchify_batch(images, fe.config().patch_size));
    Var u = fe.build(tape, patches, token);
    return tape.value(u);
}

Tensor extract_feature(const FeatureExtractor& fe, const Tensor& image,
                       const Parameter& token) {
    if (image.rank() != 3) throw ShapeError("extract_feature wants a C x S x S image");
    Tensor batch(Shape{1, image.dim(0), image.dim(1), image.dim(2)}, image.values);
    Tensor features = extract_features(fe, batch, token);
    return Tensor(Shape{features.dim(1)}, std::move(features.values));
}

} // namespace ticl
