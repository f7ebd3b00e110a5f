#include "ticl/continual.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ticl/kernels.hpp"

namespace ticl {

Batch apply_mixup(const Batch& batch, const std::vector<int32_t>& class_list, Rng& rng) {
    const int64_t b = batch.images.dim(0);
    if (b < 2) throw StateError("mixup needs a batch of at least 2 samples");
    const int64_t k = static_cast<int64_t>(class_list.size());

    // random cyclic derangement: shuffle, then pair each element with its successor
    std::vector<int64_t> order(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) order[static_cast<size_t>(i)] = i;
    rng.shuffle(order);
    std::vector<int64_t> partner(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) {
        partner[static_cast<size_t>(order[static_cast<size_t>(i)])] =
            order[static_cast<size_t>((i + 1) % b)];
    }

    auto local_of = [&](int32_t global) {
        for (int64_t c = 0; c < k; ++c) {
            if (class_list[static_cast<size_t>(c)] == global) return c;
        }
        throw RehearsalError("mixup label outside the current task");
    };

    Batch out;
    out.labels = batch.labels;
    out.images = Tensor(batch.images.shape());
    out.soft_targets = Tensor({b, k});
    const int64_t stride = batch.images.numel() / b;
    for (int64_t i = 0; i < b; ++i) {
        const int64_t j = partner[static_cast<size_t>(i)];
        const float* xi = batch.images.data() + i * stride;
        const float* xj = batch.images.data() + j * stride;
        float* dst = out.images.data() + i * stride;
        for (int64_t p = 0; p < stride; ++p) dst[p] = 0.5f * xi[p] + 0.5f * xj[p];
        float* trow = out.soft_targets.data() + i * k;
        trow[local_of(batch.labels[static_cast<size_t>(i)])] += 0.5f;
        trow[local_of(batch.labels[static_cast<size_t>(j)])] += 0.5f;
    }
    return out;
}

ContinualLearner::ContinualLearner(EncoderConfig enc_cfg, float lambda, uint64_t seed,
                                   bool squared_distance)
    : enc_cfg_(enc_cfg), lambda_(lambda), seed_(seed), squared_distance_(squared_distance) {
    if (lambda_ < 0.0f) throw ConfigError("lambda must be >= 0");
    enc_cfg_.validate();
    Rng init = Rng(seed_).fork(0x1417);
    student_ = std::make_unique<FeatureExtractor>(enc_cfg_, init);
}

void ContinualLearner::set_lambda(float l) {
    if (l < 0.0f) throw ConfigError("lambda must be >= 0");
    lambda_ = l;
}

std::vector<int32_t> ContinualLearner::task_ids() const {
    std::vector<int32_t> ids;
    ids.reserve(tasks_.size());
    for (const auto& t : tasks_) ids.push_back(t->token.task_id);
    return ids;
}

const ContinualLearner::TaskEntry& ContinualLearner::entry(int32_t task_id) const {
    for (const auto& t : tasks_) {
        if (t->token.task_id == task_id) return *t;
    }
    throw StateError("unknown or forgotten task " + std::to_string(task_id));
}

ContinualLearner::TaskEntry& ContinualLearner::entry(int32_t task_id) {
    return const_cast<TaskEntry&>(std::as_const(*this).entry(task_id));
}

const TaskToken& ContinualLearner::token(int32_t task_id) const { return entry(task_id).token; }
const ClassifierHead& ContinualLearner::head(int32_t task_id) const { return entry(task_id).head; }
TaskToken& ContinualLearner::token(int32_t task_id) { return entry(task_id).token; }
ClassifierHead& ContinualLearner::head(int32_t task_id) { return entry(task_id).head; }

void ContinualLearner::begin_step(const std::vector<int32_t>& class_list) {
    if (step_open_) throw StateError("begin_step while a step's training is in progress");
    if (class_list.empty()) throw ConfigError("class list must not be empty");
    std::set<int32_t> wanted(class_list.begin(), class_list.end());
    if (wanted.size() != class_list.size()) {
        throw ConfigError("class list contains duplicates");
    }
    for (const auto& t : tasks_) {
        for (int32_t c : t->head.classes) {
            if (wanted.count(c)) {
                throw StateError("class " + std::to_string(c) + " already learned");
            }
        }
    }

    if (step_ >= 1) {
        teacher_ = std::make_unique<FeatureExtractor>(*student_);
        teacher_->freeze_all();
    }
    for (auto& t : tasks_) {
        t->token.theta.frozen = true;
        t->head.w.frozen = true;
        t->head.b.frozen = true;
    }

    ++step_;
    auto task = std::make_unique<TaskEntry>();
    task->token.task_id = step_;
    if (!tasks_.empty()) {
        // inherit the newest token's values
        const Parameter& prev = tasks_.back()->token.theta;
        task->token.theta.tensor = Tensor(prev.tensor.shape(), prev.tensor.values);
    } else {
        Rng tok_rng = Rng(seed_).fork(0x7031 + static_cast<uint64_t>(step_));
        task->token.theta.tensor = Tensor::randn({enc_cfg_.embed_dim}, tok_rng, 0.02f);
    }
    task->token.theta.tensor.requires_grad = true;
    task->token.theta.name = "token." + std::to_string(step_);
    task->token.theta.frozen = false;

    const int64_t k = static_cast<int64_t>(class_list.size());
    Rng head_rng = Rng(seed_).fork(0x4ead + static_cast<uint64_t>(step_));
    task->head.task_id = step_;
    task->head.classes = class_list;
    task->head.w = Parameter{Tensor::randn({enc_cfg_.embed_dim, k}, head_rng, 0.02f),
                             "head." + std::to_string(step_) + ".w", false};
    task->head.b = Parameter{Tensor::zeros({k}),
                             "head." + std::to_string(step_) + ".b", false};
    task->head.w.tensor.requires_grad = true;
    task->head.b.tensor.requires_grad = true;

    tasks_.push_back(std::move(task));
    step_open_ = true;
}

ContinualLearner::GraphLosses ContinualLearner::build_losses(Tape& tape, const Batch& batch) {
    if (step_ < 1) throw StateError("no step has been started");
    if (batch.images.rank() != 4 || batch.images.dim(0) < 1) {
        throw ShapeError("batch images must be B x C x S x S with B >= 1");
    }
    TaskEntry& cur = entry(step_);

    const bool soft = batch.soft_targets.numel() > 0;
    std::vector<int32_t> local;
    local.reserve(batch.labels.size());
    for (int32_t g : batch.labels) {
        auto it = std::find(cur.head.classes.begin(), cur.head.classes.end(), g);
        if (it == cur.head.classes.end()) {
            throw RehearsalError("batch label " + std::to_string(g) +
                                 " is outside the current task");
        }
        local.push_back(static_cast<int32_t>(it - cur.head.classes.begin()));
    }

    const Tensor patches = patchify_batch(batch.images, enc_cfg_.patch_size);

    // classification branch: current token, current head
    Var u_t = student_->build(tape, tape.leaf(patches), cur.token.theta);
    Var logits = tape.add_bias(tape.matmul(u_t, tape.leaf(cur.head.w)),
                               tape.leaf(cur.head.b));
    Var clf = soft ? tape.cross_entropy(logits, batch.soft_targets)
                   : tape.cross_entropy(logits, local);

    // distillation branch: one feature-distance term per frozen task token,
    // accumulated in fixed ascending-task order
    GraphLosses out;
    Var distill = -1;
    if (teacher_ && tasks_.size() > 1) {
        const FeatureExtractor& teacher = *teacher_;
        for (const auto& t : tasks_) {
            if (t->token.task_id == step_) continue;
            Tape teacher_tape;
            Var tu = teacher.build(teacher_tape, teacher_tape.leaf(patches), t->token.theta);
            Var su = student_->build(tape, tape.leaf(patches), t->token.theta);
            Var fd = tape.feature_distance(su, tape.leaf(teacher_tape.value(tu)),
                                           squared_distance_);
            distill = distill < 0 ? fd : tape.add(distill, fd);
        }
    }

    out.vals.clf = tape.scalar(clf);
    if (distill >= 0) {
        out.vals.distill = tape.scalar(distill);
        if (lambda_ != 0.0f) {
            out.total = tape.add(clf, tape.scale(distill, lambda_));
        } else {
            out.total = clf; // exact identity when lambda is 0
        }
    } else {
        out.total = clf; // step 1: empty distillation sum
    }
    out.vals.total = tape.scalar(out.total);
    return out;
}

LossBreakdown ContinualLearner::compute_losses(const Batch& batch) {
    scratch_.clear();
    return build_losses(scratch_, batch).vals;
}

std::vector<Parameter*> ContinualLearner::trainable_parameters() {
    if (step_ < 1) throw StateError("no step has been started");
    TaskEntry& cur = entry(step_);
    std::vector<Parameter*> params = student_->parameters();
    params.push_back(&cur.token.theta);
    params.push_back(&cur.head.w);
    params.push_back(&cur.head.b);
    return params;
}

std::vector<LossBreakdown> ContinualLearner::train_step(const StepView& step,
                                                        const TrainConfig& cfg) {
    if (!step_open_) throw StateError("train_step without begin_step");
    const TaskEntry& cur = entry(step_);
    if (std::set<int32_t>(step.classes.begin(), step.classes.end()) !=
        std::set<int32_t>(cur.head.classes.begin(), cur.head.classes.end())) {
        throw ConfigError("step view classes do not match the open task");
    }
    if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");

    const auto first_epoch = make_epoch_batches(step, cfg.batch_size, cfg.seed, cfg.shuffle, 0);
    OptimConfig ocfg = cfg.optim;
    if (ocfg.cosine && ocfg.total_steps == 0) {
        ocfg.total_steps = static_cast<int64_t>(cfg.epochs) *
                           static_cast<int64_t>(first_epoch.size());
    }
    Optimizer optim(trainable_parameters(), ocfg);
    Rng mix_rng = Rng(cfg.seed).fork(0x313c0 + static_cast<uint64_t>(step_));

    std::vector<LossBreakdown> history;
    Tape tape;
    for (int32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = make_epoch_batches(step, cfg.batch_size, cfg.seed, cfg.shuffle, epoch);
        double clf_sum = 0.0, distill_sum = 0.0, total_sum = 0.0;
        for (const auto& idx : batches) {
            Batch batch;
            batch.images = normalize_images(*step.train_set, idx, cfg.norm);
            batch.labels.reserve(idx.size());
            for (int64_t i : idx) batch.labels.push_back(step.train_set->label(i));
            if (cfg.mixup_first_step && step_ == 1 && idx.size() >= 2) {
                batch = apply_mixup(batch, cur.head.classes, mix_rng);
            }
            tape.clear();
            GraphLosses g = build_losses(tape, batch);
            optim.zero_grad();
            tape.backward(g.total);
            optim.step();
            clf_sum += g.vals.clf;
            distill_sum += g.vals.distill;
            total_sum += g.vals.total;
        }
        const double nb = static_cast<double>(batches.size());
        history.push_back({static_cast<float>(clf_sum / nb),
                           static_cast<float>(distill_sum / nb),
                           static_cast<float>(total_sum / nb)});
    }
    step_open_ = false;
    return history;
}

Tensor ContinualLearner::head_logits(const Tensor& features, const ClassifierHead& head) const {
    const int64_t b = features.dim(0);
    const int64_t k = head.b.tensor.dim(0);
    Tensor logits({b, k});
    kern::gemm(false, false, b, k, enc_cfg_.embed_dim, 1.0f, features.data(),
               enc_cfg_.embed_dim, head.w.tensor.data(), k, 0.0f, logits.data(), k);
    for (int64_t r = 0; r < b; ++r) {
        kern::vadd(k, logits.data() + r * k, head.b.tensor.data(), logits.data() + r * k);
    }
    return logits;
}

std::vector<int32_t> ContinualLearner::classify_batch(const Tensor& images,
                                                      int32_t token_task,
                                                      int32_t head_task) const {
    const TaskEntry& tok = entry(token_task);
    const TaskEntry& hd = entry(head_task);
    const Tensor features = extract_features(*student_, images, tok.token.theta);
    const Tensor logits = head_logits(features, hd.head);
    const int64_t k = logits.dim(1);
    std::vector<int32_t> out;
    out.reserve(static_cast<size_t>(logits.dim(0)));
    for (int64_t r = 0; r < logits.dim(0); ++r) {
        const float* row = logits.data() + r * k;
        int64_t best = 0;
        for (int64_t c = 1; c < k; ++c) {
            if (row[c] > row[best]) best = c;
        }
        out.push_back(hd.head.classes[static_cast<size_t>(best)]);
    }
    return out;
}

int32_t ContinualLearner::predict_task_il(const Tensor& image, int32_t task_id) const {
    if (image.rank() != 3) throw ShapeError("predict wants a C x S x S image");
    Tensor batch(Shape{1, image.dim(0), image.dim(1), image.dim(2)}, image.values);
    return classify_batch(batch, task_id, task_id)[0];
}

std::vector<std::pair<int32_t, int32_t>> ContinualLearner::classify_class_il_batch(
    const Tensor& images) const {
    if (tasks_.empty()) throw StateError("no tasks remain");
    const int64_t b = images.dim(0);
    std::vector<std::pair<int32_t, int32_t>> best(static_cast<size_t>(b), {0, 0});
    std::vector<float> best_logit(static_cast<size_t>(b));
    bool first_head = true;
    for (const auto& t : tasks_) {
        const Tensor features = extract_features(*student_, images, t->token.theta);
        const Tensor logits = head_logits(features, t->head);
        const int64_t k = logits.dim(1);
        for (int64_t r = 0; r < b; ++r) {
            const float* row = logits.data() + r * k;
            for (int64_t c = 0; c < k; ++c) {
                if ((first_head && c == 0) || row[c] > best_logit[static_cast<size_t>(r)]) {
                    best_logit[static_cast<size_t>(r)] = row[c];
                    best[static_cast<size_t>(r)] = {t->token.task_id,
                                                    t->head.classes[static_cast<size_t>(c)]};
                }
            }
        }
        first_head = false;
    }
    return best;
}

std::pair<int32_t, int32_t> ContinualLearner::predict_class_il(const Tensor& image) const {
    if (image.rank() != 3) throw ShapeError("predict wants a C x S x S image");
    Tensor batch(Shape{1, image.dim(0), image.dim(1), image.dim(2)}, image.values);
    return classify_class_il_batch(batch)[0];
}

void ContinualLearner::forget_task(int32_t task_id) {
    if (step_open_ && task_id == step_) {
        throw StateError("cannot forget the task currently in training");
    }
    for (auto it = tasks_.begin(); it != tasks_.end(); ++it) {
        if ((*it)->token.task_id == task_id) {
            tasks_.erase(it);
            return;
        }
    }
    throw StateError("unknown or forgotten task " + std::to_string(task_id));
}

void ContinualLearner::restore(int32_t step, std::vector<TaskToken> tokens,
                               std::vector<ClassifierHead> heads) {
    if (tokens.size() != heads.size()) {
        throw CheckpointError("token/head registries differ in length");
    }
    tasks_.clear();
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i].task_id != heads[i].task_id) {
            throw CheckpointError("token/head registries disagree on task ids");
        }
        auto task = std::make_unique<TaskEntry>();
        task->token = std::move(tokens[i]);
        task->head = std::move(heads[i]);
        const bool last = i + 1 == tokens.size();
        task->token.theta.frozen = !last;
        task->token.theta.tensor.requires_grad = true;
        task->head.w.frozen = !last;
        task->head.b.frozen = !last;
        task->head.w.tensor.requires_grad = true;
        task->head.b.tensor.requires_grad = true;
        tasks_.push_back(std::move(task));
    }
    step_ = step;
    step_open_ = false;
    teacher_.reset();
}

} // namespace ticl
