#pragma once

#include <cstdint>
#include <string>

namespace ticl {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;     // invalid configuration or usage
inline constexpr int kExitData = 3;       // dataset missing or malformed
inline constexpr int kExitNumeric = 4;    // non-finite loss or similar
inline constexpr int kExitCheckpoint = 5; // corrupt checkpoint

struct ExperimentConfig {
    std::string scenario = "custom"; // b0-5 | b0-10 | b50-5 | b50-10 | custom
    std::string dataset = "synthetic"; // cifar100 | synthetic
    std::string data_dir = ".";        // holds train.bin / test.bin for cifar100
    std::string preset = "desk";       // desk | paper

    // custom scenario shape
    int32_t steps = 4;
    int32_t initial_classes = 0;

    // synthetic dataset shape
    int32_t classes = 20;
    int32_t per_class_train = 64;
    int32_t per_class_test = 16;

    // training
    double lambda = 1.0;
    int32_t epochs = 5;
    int32_t batch = 32;
    double lr = 5e-4;
    double weight_decay = 0.05;
    std::string optimizer = "adamw"; // adamw | sgd
    bool cosine = true;
    uint64_t seed = 1;
    bool mixup = false;              // mix-up during the first step only
    uint64_t class_order_seed = 0;   // 0 keeps ascending label order

    std::string out_dir = "out";

    void validate() const; // throws ConfigError
};

/// Runs the scenario end to end: one checkpoint per step plus accuracy and
/// summary CSVs and SVG charts under out_dir.
int cmd_train(const ExperimentConfig& cfg);

/// Evaluates every task of a checkpoint in task-IL or class-IL mode and
/// writes an accuracy CSV (stdout when out_csv is empty).
int cmd_eval(const std::string& checkpoint_path, const std::string& mode,
             const std::string& data_dir, const std::string& out_csv);

/// Full token-by-task accuracy grid plus a heatmap SVG.
int cmd_ablate(const std::string& checkpoint_path, const std::string& data_dir,
               const std::string& out_dir);

/// Copies a checkpoint without one task's token and head.
int cmd_forget(const std::string& checkpoint_path, int32_t task_id,
               const std::string& out_path);

} // namespace ticl
