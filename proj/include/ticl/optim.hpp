#pragma once

#include <cstdint>
#include <vector>

#include "ticl/tensor.hpp"

namespace ticl {

struct OptimConfig {
    enum class Kind { sgd, adamw };
    Kind kind = Kind::adamw;
    float lr = 5e-4f;
    float weight_decay = 0.05f; // adamw only (decoupled)
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    bool cosine = true;         // cosine decay to 0 over total_steps
    int64_t total_steps = 0;    // 0 disables the schedule
};

/// Updates unfrozen parameters in place; frozen parameters are never touched,
/// so their bytes are identical across any number of steps.
class Optimizer {
public:
    Optimizer(std::vector<Parameter*> params, OptimConfig cfg);

    void step();
    void zero_grad();

    float current_lr() const;
    int64_t steps_taken() const { return t_; }

private:
    std::vector<Parameter*> params_;
    OptimConfig cfg_;
    std::vector<std::vector<float>> m_, v_; // adamw moments per parameter
    int64_t t_ = 0;
};

} // namespace ticl
