#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "ticl/data.hpp"
#include "ticl/encoder.hpp"
#include "ticl/optim.hpp"
#include "ticl/tape.hpp"

namespace ticl {

/// Learnable task vector; frozen once its step completes.
struct TaskToken {
    int32_t task_id = 0;
    Parameter theta; // length D
};

/// Affine classifier over one task's classes; never receives gradients after
/// its step is frozen.
struct ClassifierHead {
    int32_t task_id = 0;
    std::vector<int32_t> classes; // global labels, disjoint across heads
    Parameter w;                  // D x K
    Parameter b;                  // K
};

struct LossBreakdown {
    float clf = 0.0f;
    float distill = 0.0f;
    float total = 0.0f;
};

struct Batch {
    Tensor images;                // B x C x S x S, normalized
    std::vector<int32_t> labels;  // global class ids
    Tensor soft_targets;          // optional B x K_t local distributions (numel 0 = none)
};

struct TrainConfig {
    int32_t epochs = 5;
    int64_t batch_size = 32;
    OptimConfig optim;
    bool mixup_first_step = false;
    bool shuffle = true;
    uint64_t seed = 0;
    NormStats norm = NormStats::cifar();
};

/// Pair images within a batch by a seeded random cyclic derangement; pixels
/// blend 0.5/0.5 and labels become equal-weight soft distributions over the
/// given class list. Batch must hold at least 2 samples.
Batch apply_mixup(const Batch& batch, const std::vector<int32_t>& class_list, Rng& rng);

/// Incremental-learning state machine: one student feature extractor, a
/// frozen previous-step teacher, one token and one classifier head per task.
/// Training in step t updates exactly {student, token t, head t}; every older
/// token/head and the teacher are bit-frozen. No sample outside the current
/// step's data is ever read.
class ContinualLearner {
public:
    ContinualLearner(EncoderConfig enc_cfg, float lambda, uint64_t seed,
                     bool squared_distance = false);

    /// Freeze everything learned so far, snapshot the student as the new
    /// teacher (from step 2 on), and open a new task over `class_list`.
    /// The new token copies the newest existing token (random for task 1).
    void begin_step(const std::vector<int32_t>& class_list);

    /// Classification loss on the current head plus the per-token feature
    /// distillation sum against the frozen teacher. Teacher passes never
    /// enter the gradient graph. Labels must belong to the current task.
    LossBreakdown compute_losses(const Batch& batch);

    /// One task's training loop; returns the per-epoch mean loss breakdown.
    std::vector<LossBreakdown> train_step(const StepView& step, const TrainConfig& cfg);

    /// Task-IL inference: the true task id is supplied. Returns the global
    /// class label; ties broken toward the lowest class index.
    int32_t predict_task_il(const Tensor& image, int32_t task_id) const;

    /// Class-IL inference: argmax over the concatenated logits of every
    /// remaining head, each computed from its own token's feature.
    /// Returns (task_id, global class label).
    std::pair<int32_t, int32_t> predict_class_il(const Tensor& image) const;

    /// The one classification path everything routes through: features from
    /// `token_task`'s token, argmax over `head_task`'s logits. Task-IL is the
    /// aligned case; the token-ablation sweep uses the crossed ones.
    std::vector<int32_t> classify_batch(const Tensor& images, int32_t token_task,
                                        int32_t head_task) const;

    /// Batched class-IL predictions.
    std::vector<std::pair<int32_t, int32_t>> classify_class_il_batch(const Tensor& images) const;

    /// Drop a task's token and head. The extractor is untouched, so every
    /// other task's predictions are bit-identical afterwards.
    void forget_task(int32_t task_id);

    int32_t current_step() const { return step_; }
    bool step_open() const { return step_open_; }
    bool has_teacher() const { return teacher_ != nullptr; }

    FeatureExtractor& student() { return *student_; }
    const FeatureExtractor& student() const { return *student_; }
    const FeatureExtractor* teacher() const { return teacher_.get(); }

    std::vector<int32_t> task_ids() const; // ascending, non-forgotten
    const TaskToken& token(int32_t task_id) const;
    const ClassifierHead& head(int32_t task_id) const;
    TaskToken& token(int32_t task_id);
    ClassifierHead& head(int32_t task_id);

    float lambda() const { return lambda_; }
    void set_lambda(float l);
    uint64_t seed() const { return seed_; }
    bool squared_distance() const { return squared_distance_; }

    /// Parameters trainable in the open step: student + token t + head t.
    std::vector<Parameter*> trainable_parameters();

    /// Checkpoint restore: replaces all task state; tokens/heads before the
    /// last are frozen.
    void restore(int32_t step, std::vector<TaskToken> tokens,
                 std::vector<ClassifierHead> heads);

private:
    struct TaskEntry {
        TaskToken token;
        ClassifierHead head;
    };

    struct GraphLosses {
        LossBreakdown vals;
        Var total = -1;
    };

    GraphLosses build_losses(Tape& tape, const Batch& batch);
    const TaskEntry& entry(int32_t task_id) const;
    TaskEntry& entry(int32_t task_id);
    Tensor head_logits(const Tensor& features, const ClassifierHead& head) const;

    EncoderConfig enc_cfg_;
    float lambda_;
    uint64_t seed_;
    bool squared_distance_;
    std::unique_ptr<FeatureExtractor> student_;
    std::unique_ptr<FeatureExtractor> teacher_;
    std::vector<std::unique_ptr<TaskEntry>> tasks_;
    int32_t step_ = 0;
    bool step_open_ = false;
    Tape scratch_; // reused across compute_losses calls
};

} // namespace ticl
