#include "ticl/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

#include "ticl/common.hpp"

namespace ticl {

double step_accuracy(std::span<const int32_t> predictions, std::span<const int32_t> targets) {
    if (predictions.empty() || predictions.size() != targets.size()) {
        throw ConfigError("step_accuracy needs nonempty, equal-length inputs");
    }
    int64_t hits = 0;
    for (size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == targets[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

void AccuracyMatrix::record(int32_t step_k, int32_t task_j, double accuracy) {
    if (step_k < 1 || task_j < 1 || task_j > step_k) {
        throw ConfigError("accuracy matrix entries need 1 <= j <= k");
    }
    if (accuracy < 0.0 || accuracy > 1.0) {
        throw ConfigError("accuracy must lie in [0, 1]");
    }
    if (steps() < step_k) rows_.resize(static_cast<size_t>(step_k));
    auto& row = rows_[static_cast<size_t>(step_k - 1)];
    if (static_cast<int32_t>(row.size()) < task_j) row.resize(static_cast<size_t>(task_j), -1.0);
    row[static_cast<size_t>(task_j - 1)] = accuracy;
}

void AccuracyMatrix::set_sample_count(int32_t task_k, int64_t n) {
    if (task_k < 1 || n < 1) throw ConfigError("sample counts need k >= 1, n >= 1");
    if (static_cast<int32_t>(counts_.size()) < task_k) {
        counts_.resize(static_cast<size_t>(task_k), 0);
    }
    counts_[static_cast<size_t>(task_k - 1)] = n;
}

void AccuracyMatrix::set_alpha_override(std::vector<double> alpha) {
    alpha_override_ = std::move(alpha);
}

bool AccuracyMatrix::has(int32_t step_k, int32_t task_j) const {
    if (step_k < 1 || task_j < 1 || step_k > steps()) return false;
    const auto& row = rows_[static_cast<size_t>(step_k - 1)];
    return task_j <= static_cast<int32_t>(row.size()) &&
           row[static_cast<size_t>(task_j - 1)] >= 0.0;
}

double AccuracyMatrix::entry(int32_t step_k, int32_t task_j) const {
    if (!has(step_k, task_j)) {
        throw ConfigError("missing accuracy entry A_" + std::to_string(task_j) + "^" +
                          std::to_string(step_k));
    }
    return rows_[static_cast<size_t>(step_k - 1)][static_cast<size_t>(task_j - 1)];
}

int64_t AccuracyMatrix::sample_count(int32_t task_k) const {
    if (task_k < 1 || task_k > static_cast<int32_t>(counts_.size()) ||
        counts_[static_cast<size_t>(task_k - 1)] <= 0) {
        throw ConfigError("missing sample count for task " + std::to_string(task_k));
    }
    return counts_[static_cast<size_t>(task_k - 1)];
}

double AccuracyMatrix::alpha(int32_t step_k, int32_t t) const {
    if (!alpha_override_.empty()) {
        if (step_k > static_cast<int32_t>(alpha_override_.size())) {
            throw ConfigError("alpha override shorter than requested step");
        }
        return alpha_override_[static_cast<size_t>(step_k - 1)];
    }
    double denom = 0.0;
    for (int32_t k = 1; k <= t; ++k) denom += static_cast<double>(sample_count(k));
    return static_cast<double>(sample_count(step_k)) / denom;
}

double AccuracyMatrix::overall_accuracy(int32_t t) const {
    if (t < 1) throw ConfigError("overall_accuracy needs t >= 1");
    double acc = 0.0;
    for (int32_t k = 1; k <= t; ++k) {
        acc += alpha(k, t) * entry(t, k);
    }
    return acc;
}

double AccuracyMatrix::backward_transfer(int32_t t) const {
    if (t < 2) throw ConfigError("backward_transfer needs t >= 2");
    double sum = 0.0;
    for (int32_t k = 2; k <= t; ++k) {
        const double a_k = alpha(k, t);
        for (int32_t j = 1; j < k; ++j) {
            sum += a_k * (entry(k, j) - entry(j, j));
        }
    }
    return sum / static_cast<double>(t - 1);
}

std::vector<std::vector<double>> token_ablation_matrix(
    const ContinualLearner& learner, std::span<const TaskTestSet> tests) {
    const std::vector<int32_t> ids = learner.task_ids();
    if (ids.empty()) throw StateError("no tasks to ablate");
    std::vector<const TaskTestSet*> by_task;
    for (int32_t id : ids) {
        const TaskTestSet* found = nullptr;
        for (const TaskTestSet& t : tests) {
            if (t.task_id == id) found = &t;
        }
        if (!found) throw ConfigError("missing test data for task " + std::to_string(id));
        by_task.push_back(found);
    }
    const size_t n = ids.size();
    std::vector<std::vector<double>> grid(n, std::vector<double>(n, 0.0));
    for (size_t ti = 0; ti < n; ++ti) {
        for (size_t dj = 0; dj < n; ++dj) {
            const TaskTestSet& test = *by_task[dj];
            const std::vector<int32_t> preds =
                learner.classify_batch(test.images, ids[ti], ids[dj]);
            grid[ti][dj] = step_accuracy(preds, test.labels);
        }
    }
    return grid;
}

namespace {

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

} // namespace

std::string accuracy_csv(const AccuracyMatrix& m) {
    std::ostringstream os;
    os << "step,task,accuracy\n";
    for (int32_t k = 1; k <= m.steps(); ++k) {
        for (int32_t j = 1; j <= k; ++j) {
            if (m.has(k, j)) os << k << ',' << j << ',' << fmt6(m.entry(k, j)) << '\n';
        }
    }
    return os.str();
}

std::string summary_csv(const AccuracyMatrix& m) {
    std::ostringstream os;
    os << "step,overall_accuracy,bwt\n";
    for (int32_t t = 1; t <= m.steps(); ++t) {
        os << t << ',' << fmt6(m.overall_accuracy(t)) << ',';
        // bwt reported in percentage points; undefined before step 2
        if (t >= 2) os << fmt6(100.0 * m.backward_transfer(t));
        os << '\n';
    }
    return os.str();
}

std::string ablation_csv(const std::vector<std::vector<double>>& grid,
                         std::span<const int32_t> task_ids) {
    if (grid.size() != task_ids.size()) {
        throw ConfigError("ablation grid and task id count differ");
    }
    std::ostringstream os;
    os << "token,task,accuracy\n";
    for (size_t i = 0; i < grid.size(); ++i) {
        for (size_t j = 0; j < grid[i].size(); ++j) {
            os << task_ids[i] << ',' << task_ids[j] << ',' << fmt6(grid[i][j]) << '\n';
        }
    }
    return os.str();
}

namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string& text,
                                                const std::string& expect_header) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != expect_header) {
        throw DataError("unexpected CSV header: " + line);
    }
    std::vector<std::vector<std::string>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

} // namespace

AccuracyMatrix parse_accuracy_csv(const std::string& text) {
    AccuracyMatrix m;
    for (const auto& cells : parse_csv(text, "step,task,accuracy")) {
        if (cells.size() != 3) throw DataError("malformed accuracy CSV row");
        m.record(std::stoi(cells[0]), std::stoi(cells[1]), std::stod(cells[2]));
    }
    return m;
}

std::vector<std::vector<double>> parse_ablation_csv(const std::string& text) {
    std::map<int32_t, std::map<int32_t, double>> entries;
    for (const auto& cells : parse_csv(text, "token,task,accuracy")) {
        if (cells.size() != 3) throw DataError("malformed ablation CSV row");
        entries[std::stoi(cells[0])][std::stoi(cells[1])] = std::stod(cells[2]);
    }
    std::vector<std::vector<double>> grid;
    for (const auto& [tok, row] : entries) {
        std::vector<double> r;
        for (const auto& [task, acc] : row) r.push_back(acc);
        grid.push_back(std::move(r));
    }
    return grid;
}

} // namespace ticl
