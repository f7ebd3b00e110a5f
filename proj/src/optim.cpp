#include "ticl/optim.hpp"

#include <cmath>
#include <numbers>

#include "ticl/common.hpp"

namespace ticl {

Optimizer::Optimizer(std::vector<Parameter*> params, OptimConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    if (cfg_.kind == OptimConfig::Kind::adamw) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            const size_t n = params_[i]->tensor.values.size();
            m_[i].assign(n, 0.0f);
            v_[i].assign(n, 0.0f);
        }
    }
}

float Optimizer::current_lr() const {
    if (!cfg_.cosine || cfg_.total_steps <= 0) return cfg_.lr;
    const double frac = static_cast<double>(std::min(t_, cfg_.total_steps)) /
                        static_cast<double>(cfg_.total_steps);
    return static_cast<float>(cfg_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac)));
}

void Optimizer::step() {
    const double lr = current_lr();
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));

    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Parameter& p = *params_[pi];
        if (p.frozen || !p.tensor.requires_grad) continue;
        if (!p.tensor.has_grad()) {
            throw NumericError("missing gradient on unfrozen parameter " + p.name);
        }
        float* w = p.tensor.data();
        const float* g = p.tensor.grad.data();
        const int64_t n = p.tensor.numel();
        if (cfg_.kind == OptimConfig::Kind::sgd) {
            for (int64_t i = 0; i < n; ++i) {
                w[i] = static_cast<float>(static_cast<double>(w[i]) -
                                          lr * static_cast<double>(g[i]));
            }
        } else {
            float* m = m_[pi].data();
            float* v = v_[pi].data();
            for (int64_t i = 0; i < n; ++i) {
                const double gi = g[i];
                const double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * gi;
                const double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * gi * gi;
                m[i] = static_cast<float>(mi);
                v[i] = static_cast<float>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                const double upd = mhat / (std::sqrt(vhat) + static_cast<double>(cfg_.eps)) +
                                   static_cast<double>(cfg_.weight_decay) * static_cast<double>(w[i]);
                w[i] = static_cast<float>(static_cast<double>(w[i]) - lr * upd);
            }
        }
    }
}

void Optimizer::zero_grad() {
    for (Parameter* p : params_) p->tensor.zero_grad();
}

} // namespace ticl
