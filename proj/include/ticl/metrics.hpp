#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ticl/continual.hpp"

namespace ticl {

/// Fraction of exact matches; inputs must be nonempty and equal length.
double step_accuracy(std::span<const int32_t> predictions, std::span<const int32_t> targets);

/// Triangular record A[j][k]: accuracy on task j's test data measured after
/// step k, for j <= k. Weights alpha_k default to n_k / sum_{k'<=t} n_{k'}
/// with n_k the task's test sample count; an explicit override replaces them
/// in both formulas. All computation is 64-bit.
class AccuracyMatrix {
public:
    void record(int32_t step_k, int32_t task_j, double accuracy);
    void set_sample_count(int32_t task_k, int64_t n);
    void set_alpha_override(std::vector<double> alpha); // alpha[k-1] for step k

    int32_t steps() const { return static_cast<int32_t>(rows_.size()); }
    bool has(int32_t step_k, int32_t task_j) const;
    double entry(int32_t step_k, int32_t task_j) const; // A_j^k
    int64_t sample_count(int32_t task_k) const;

    double alpha(int32_t step_k, int32_t t) const;

    /// A^t = sum_{k<=t} alpha_k A_k^t.
    double overall_accuracy(int32_t t) const;

    /// BWT = 1/(t-1) * sum_{k=2..t} sum_{j<k} alpha_k (A_j^k - A_j^j),
    /// as a fraction (multiply by 100 for percentage points). t >= 2.
    double backward_transfer(int32_t t) const;

private:
    std::vector<std::vector<double>> rows_; // rows_[k-1][j-1], j <= k
    std::vector<int64_t> counts_;
    std::vector<double> alpha_override_;
};

/// Per-task normalized test tensors for evaluation-style sweeps.
struct TaskTestSet {
    int32_t task_id = 0;
    Tensor images;               // B x C x S x S
    std::vector<int32_t> labels; // global
};

/// Grid[i][j]: accuracy of task j's test data when features are extracted
/// with token i and classified by head j (tasks in ascending id order).
/// The diagonal reproduces task-IL accuracy through the same code path.
std::vector<std::vector<double>> token_ablation_matrix(
    const ContinualLearner& learner, std::span<const TaskTestSet> tests);

// CSV emitters; floats with 6 decimals, rows ascending.
std::string accuracy_csv(const AccuracyMatrix& m);                       // step,task,accuracy
std::string summary_csv(const AccuracyMatrix& m);                        // step,overall_accuracy,bwt
std::string ablation_csv(const std::vector<std::vector<double>>& grid,
                         std::span<const int32_t> task_ids);             // token,task,accuracy

AccuracyMatrix parse_accuracy_csv(const std::string& text);
std::vector<std::vector<double>> parse_ablation_csv(const std::string& text);

} // namespace ticl
