#pragma once

#include <string>
#include <vector>

#include "ticl/tape.hpp"
#include "ticl/tensor.hpp"

namespace ticl {

struct EncoderConfig {
    int64_t image_side = 16;
    int64_t channels = 3;
    int64_t patch_size = 4;
    int64_t embed_dim = 48;
    int64_t heads = 4;
    int64_t depth = 2;
    int64_t mlp_ratio = 4;
    float ln_eps = 1e-5f;

    int64_t grid() const { return image_side / patch_size; }
    int64_t patch_count() const { return grid() * grid(); }
    int64_t token_count() const { return patch_count() + 1; }
    int64_t patch_dim() const { return patch_size * patch_size * channels; }
    int64_t head_dim() const { return embed_dim / heads; }
    int64_t rel_offset_count() const {
        const int64_t g = 2 * grid() - 1;
        return g * g;
    }

    void validate() const; // throws ConfigError on inconsistent fields

    /// Small preset used throughout CI: 16x16 images, D=48, 4 heads, 2 blocks.
    static EncoderConfig desk();
    /// 32x32 images, D=192, 12 heads, 6 blocks.
    static EncoderConfig paper();
};

/// C x S x S image -> N x (P^2 * C) patch rows: non-overlapping P x P patches
/// in raster order, each flattened channel-major.
Tensor patchify(const Tensor& image, int64_t patch_size);

/// Batched form, B x C x S x S -> B x N x (P^2 * C).
Tensor patchify_batch(const Tensor& images, int64_t patch_size);

/// ViT-style feature extractor: patch embedding, a stack of gated positional
/// self-attention blocks, final layer norm. The feature is row 0 (the
/// prepended task token) of the last block's output after the final norm.
/// Deterministic: identical weights, token and input give bit-identical
/// features. Immutable during evaluation and shareable across threads;
/// training mutates it under a single writer.
class FeatureExtractor {
public:
    FeatureExtractor(const EncoderConfig& cfg, Rng& rng);

    const EncoderConfig& config() const { return cfg_; }

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    Parameter& param(const std::string& name);
    const Parameter& param(const std::string& name) const;

    void freeze_all();
    void set_requires_grad(bool on);

    /// Training build: records gradients for every trainable parameter and
    /// for the token if it is trainable. `patches` is a leaf of
    /// patchify_batch output, B x N x patch_dim.
    Var build(Tape& tape, Var patches, Parameter& token);

    /// Evaluation build: no gradients anywhere.
    Var build(Tape& tape, Var patches, const Parameter& token) const;

    /// Builds the embedded sequence z0 = [token; x_p E + bias], B x (N+1) x D.
    Var build_embedding(Tape& tape, Var patches, Var token_leaf) const;

private:
    struct BlockRefs {
        int ln1_g, ln1_b;
        int wq, bq, wk, bk, wv, bv;
        int pos, gate;
        int wo, bo;
        int ln2_g, ln2_b;
        int w1, b1, w2, b2;
    };

    template <typename Self, typename TokenRef>
    static Var build_impl(Self& self, Tape& tape, Var patches, TokenRef& token);

    int add_param(const std::string& name, Tensor t);

    EncoderConfig cfg_;
    std::vector<Parameter> params_;
    std::vector<BlockRefs> blocks_;
    int patch_w_, patch_b_, final_g_, final_b_;
    std::vector<int32_t> rel_index_map_; // N*N -> offset table index
};

/// Batch of features with no gradient recording: B x D.
Tensor extract_features(const FeatureExtractor& fe, const Tensor& images,
                        const Parameter& token);

/// Single-image feature u, length D.
Tensor extract_feature(const FeatureExtractor& fe, const Tensor& image,
                       const Parameter& token);

} // namespace ticl
