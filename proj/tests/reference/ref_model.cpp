#include "ref_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace refm {

namespace {

using Mat = std::vector<std::vector<double>>;
using ticl::FeatureExtractor;
using ticl::Parameter;

std::vector<double> to_d(const ticl::Tensor& t) {
    return std::vector<double>(t.values.begin(), t.values.end());
}

// rows x cols times cols x out, then + bias
Mat affine(const Mat& x, const std::vector<double>& w, const std::vector<double>& b,
           int64_t cols, int64_t out) {
    Mat y(x.size(), std::vector<double>(static_cast<size_t>(out), 0.0));
    for (size_t r = 0; r < x.size(); ++r) {
        for (int64_t o = 0; o < out; ++o) {
            double acc = b.empty() ? 0.0 : b[static_cast<size_t>(o)];
            for (int64_t c = 0; c < cols; ++c) {
                acc += x[r][static_cast<size_t>(c)] * w[static_cast<size_t>(c * out + o)];
            }
            y[r][static_cast<size_t>(o)] = acc;
        }
    }
    return y;
}

Mat layer_norm(const Mat& x, const std::vector<double>& g, const std::vector<double>& b,
               double eps) {
    Mat y = x;
    const size_t d = g.size();
    for (auto& row : y) {
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (size_t i = 0; i < d; ++i) {
            row[i] = (row[i] - mean) * inv * g[i] + b[i];
        }
    }
    return y;
}

void softmax_row(std::vector<double>& row) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double denom = 0.0;
    for (double& v : row) {
        v = std::exp(v - mx);
        denom += v;
    }
    for (double& v : row) v /= denom;
}

double gelu(double x) { return x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

} // namespace

std::vector<double> feature(const FeatureExtractor& fe,
                            const std::vector<float>& patch_rows,
                            const Parameter& token) {
    const ticl::EncoderConfig& cfg = fe.config();
    const int64_t n = cfg.patch_count();
    const int64_t d = cfg.embed_dim;
    const int64_t pd = cfg.patch_dim();
    const int64_t heads = cfg.heads;
    const int64_t hd = cfg.head_dim();
    const int64_t t = n + 1;
    if (static_cast<int64_t>(patch_rows.size()) != n * pd) {
        throw std::runtime_error("ref feature: bad patch row count");
    }

    // z0 = [token; x_p E + b]
    Mat patches(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        patches[static_cast<size_t>(i)].assign(patch_rows.begin() + i * pd,
                                               patch_rows.begin() + (i + 1) * pd);
    }
    const auto ew = to_d(fe.param("fe.patch.w").tensor);
    const auto eb = to_d(fe.param("fe.patch.b").tensor);
    Mat z = affine(patches, ew, eb, pd, d);
    z.insert(z.begin(), to_d(token.tensor));

    // relative-offset index per patch pair
    const int64_t g = cfg.grid();
    const int64_t span = 2 * g - 1;
    auto rel = [&](int64_t i, int64_t j) {
        const int64_t dr = (j / g) - (i / g) + (g - 1);
        const int64_t dc = (j % g) - (i % g) + (g - 1);
        return dr * span + dc;
    };

    for (int64_t l = 0; l < cfg.depth; ++l) {
        const std::string pre = "fe.block" + std::to_string(l) + ".";
        const Mat h = layer_norm(z, to_d(fe.param(pre + "ln1.g").tensor),
                                 to_d(fe.param(pre + "ln1.b").tensor), cfg.ln_eps);
        const Mat q = affine(h, to_d(fe.param(pre + "attn.wq").tensor),
                             to_d(fe.param(pre + "attn.bq").tensor), d, d);
        const Mat k = affine(h, to_d(fe.param(pre + "attn.wk").tensor),
                             to_d(fe.param(pre + "attn.bk").tensor), d, d);
        const Mat v = affine(h, to_d(fe.param(pre + "attn.wv").tensor),
                             to_d(fe.param(pre + "attn.bv").tensor), d, d);
        const auto pos = to_d(fe.param(pre + "attn.pos").tensor);
        const auto gate = to_d(fe.param(pre + "attn.gate").tensor);

        Mat ctx(static_cast<size_t>(t), std::vector<double>(static_cast<size_t>(d), 0.0));
        for (int64_t hh = 0; hh < heads; ++hh) {
            const int64_t off = hh * hd;
            // content attention over all rows
            Mat content(static_cast<size_t>(t), std::vector<double>(static_cast<size_t>(t)));
            for (int64_t i = 0; i < t; ++i) {
                for (int64_t j = 0; j < t; ++j) {
                    double dot = 0.0;
                    for (int64_t c = 0; c < hd; ++c) {
                        dot += q[static_cast<size_t>(i)][static_cast<size_t>(off + c)] *
                               k[static_cast<size_t>(j)][static_cast<size_t>(off + c)];
                    }
                    content[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                        dot / std::sqrt(static_cast<double>(hd));
                }
                softmax_row(content[static_cast<size_t>(i)]);
            }
            // positional attention over patch pairs only
            Mat posattn(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(n)));
            for (int64_t i = 0; i < n; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    posattn[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                        pos[static_cast<size_t>(hh * cfg.rel_offset_count() + rel(i, j))];
                }
                softmax_row(posattn[static_cast<size_t>(i)]);
            }
            const double gv = 1.0 / (1.0 + std::exp(-gate[static_cast<size_t>(hh)]));
            // blended attention: token row is content-only
            for (int64_t i = 0; i < t; ++i) {
                for (int64_t j = 0; j < t; ++j) {
                    double a;
                    if (i == 0) {
                        a = content[0][static_cast<size_t>(j)];
                    } else if (j == 0) {
                        a = (1.0 - gv) * content[static_cast<size_t>(i)][0];
                    } else {
                        a = (1.0 - gv) * content[static_cast<size_t>(i)][static_cast<size_t>(j)] +
                            gv * posattn[static_cast<size_t>(i - 1)][static_cast<size_t>(j - 1)];
                    }
                    for (int64_t c = 0; c < hd; ++c) {
                        ctx[static_cast<size_t>(i)][static_cast<size_t>(off + c)] +=
                            a * v[static_cast<size_t>(j)][static_cast<size_t>(off + c)];
                    }
                }
            }
        }
        const Mat o = affine(ctx, to_d(fe.param(pre + "attn.wo").tensor),
                             to_d(fe.param(pre + "attn.bo").tensor), d, d);
        for (int64_t i = 0; i < t; ++i) {
            for (int64_t c = 0; c < d; ++c) {
                z[static_cast<size_t>(i)][static_cast<size_t>(c)] +=
                    o[static_cast<size_t>(i)][static_cast<size_t>(c)];
            }
        }
        const Mat h2 = layer_norm(z, to_d(fe.param(pre + "ln2.g").tensor),
                                  to_d(fe.param(pre + "ln2.b").tensor), cfg.ln_eps);
        Mat m = affine(h2, to_d(fe.param(pre + "mlp.w1").tensor),
                       to_d(fe.param(pre + "mlp.b1").tensor), d, cfg.mlp_ratio * d);
        for (auto& row : m) {
            for (double& x : row) x = gelu(x);
        }
        const Mat m2 = affine(m, to_d(fe.param(pre + "mlp.w2").tensor),
                              to_d(fe.param(pre + "mlp.b2").tensor), cfg.mlp_ratio * d, d);
        for (int64_t i = 0; i < t; ++i) {
            for (int64_t c = 0; c < d; ++c) {
                z[static_cast<size_t>(i)][static_cast<size_t>(c)] +=
                    m2[static_cast<size_t>(i)][static_cast<size_t>(c)];
            }
        }
    }
    const Mat zf = layer_norm(z, to_d(fe.param("fe.final_ln.g").tensor),
                              to_d(fe.param("fe.final_ln.b").tensor), cfg.ln_eps);
    return zf[0];
}

std::vector<double> feature_of_image(const FeatureExtractor& fe, const ticl::Tensor& image,
                                     const Parameter& token) {
    const ticl::Tensor patches = ticl::patchify(image, fe.config().patch_size);
    return feature(fe, patches.values, token);
}

double cross_entropy(const std::vector<std::vector<double>>& logits,
                     const std::vector<int32_t>& local_labels) {
    double total = 0.0;
    for (size_t r = 0; r < logits.size(); ++r) {
        double mx = logits[r][0];
        for (double v : logits[r]) mx = std::max(mx, v);
        double denom = 0.0;
        for (double v : logits[r]) denom += std::exp(v - mx);
        const double lse = mx + std::log(denom);
        total += lse - logits[r][static_cast<size_t>(local_labels[r])];
    }
    return total / static_cast<double>(logits.size());
}

double loss_total(const ticl::ContinualLearner& learner, const ticl::Batch& batch) {
    const ticl::FeatureExtractor& student = learner.student();
    const ticl::EncoderConfig& cfg = student.config();
    const int32_t t = learner.current_step();
    const ticl::ClassifierHead& head = learner.head(t);
    const int64_t b = batch.images.dim(0);
    const int64_t d = cfg.embed_dim;
    const int64_t k = static_cast<int64_t>(head.classes.size());

    const ticl::Tensor patches = ticl::patchify_batch(batch.images, cfg.patch_size);
    const int64_t row_len = cfg.patch_count() * cfg.patch_dim();
    auto patch_rows_of = [&](int64_t i) {
        return std::vector<float>(patches.values.begin() + i * row_len,
                                  patches.values.begin() + (i + 1) * row_len);
    };

    const auto hw = to_d(head.w.tensor);
    const auto hb = to_d(head.b.tensor);
    std::vector<std::vector<double>> logits;
    std::vector<int32_t> local;
    for (int64_t i = 0; i < b; ++i) {
        const auto u = feature(student, patch_rows_of(i), learner.token(t).theta);
        std::vector<double> row(static_cast<size_t>(k));
        for (int64_t c = 0; c < k; ++c) {
            double acc = hb[static_cast<size_t>(c)];
            for (int64_t j = 0; j < d; ++j) {
                acc += u[static_cast<size_t>(j)] * hw[static_cast<size_t>(j * k + c)];
            }
            row[static_cast<size_t>(c)] = acc;
        }
        logits.push_back(std::move(row));
        const auto it = std::find(head.classes.begin(), head.classes.end(),
                                  batch.labels[static_cast<size_t>(i)]);
        local.push_back(static_cast<int32_t>(it - head.classes.begin()));
    }
    double total = cross_entropy(logits, local);

    if (learner.teacher()) {
        double distill = 0.0;
        for (int32_t id : learner.task_ids()) {
            if (id == t) continue;
            double task_sum = 0.0;
            for (int64_t i = 0; i < b; ++i) {
                const auto rows = patch_rows_of(i);
                const auto su = feature(student, rows, learner.token(id).theta);
                const auto tu = feature(*learner.teacher(), rows, learner.token(id).theta);
                double sq = 0.0;
                for (int64_t c = 0; c < d; ++c) {
                    const double diff = su[static_cast<size_t>(c)] - tu[static_cast<size_t>(c)];
                    sq += diff * diff;
                }
                task_sum += learner.squared_distance() ? sq : std::sqrt(sq);
            }
            distill += task_sum / static_cast<double>(b);
        }
        total += static_cast<double>(learner.lambda()) * distill;
    }
    return total;
}

} // namespace refm
