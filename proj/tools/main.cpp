#include <CLI11.hpp>

#include <cstdint>
#include <string>

#include "ticl/commands.hpp"
#include "ticl/kernels.hpp"

// ticl: task-incremental continual learning on a token-conditioned ViT-style
// encoder. Subcommands: train, eval, ablate, forget. Thread count comes from
// TICL_THREADS, kernel backend from TICL_KERNELS (scalar|avx2).

int main(int argc, char** argv) {
    CLI::App app{"task-incremental continual learning engine"};
    app.require_subcommand(1);

    ticl::ExperimentConfig cfg;
    CLI::App* train = app.add_subcommand("train", "run an incremental scenario");
    train->set_config("--config", "", "TOML/INI config file; flags override it");
    train->add_option("--scenario", cfg.scenario, "b0-5|b0-10|b50-5|b50-10|custom");
    train->add_option("--dataset", cfg.dataset, "cifar100|synthetic");
    train->add_option("--data-dir", cfg.data_dir, "directory with train.bin/test.bin");
    train->add_option("--preset", cfg.preset, "encoder preset: desk|paper");
    train->add_option("--steps", cfg.steps, "steps for the custom scenario");
    train->add_option("--initial-classes", cfg.initial_classes, "initial block (custom)");
    train->add_option("--classes", cfg.classes, "synthetic class count");
    train->add_option("--per-class-train", cfg.per_class_train, "synthetic train images/class");
    train->add_option("--per-class-test", cfg.per_class_test, "synthetic test images/class");
    train->add_option("--lambda", cfg.lambda, "distillation weight");
    train->add_option("--epochs", cfg.epochs, "epochs per step");
    train->add_option("--batch", cfg.batch, "batch size");
    train->add_option("--lr", cfg.lr, "learning rate");
    train->add_option("--weight-decay", cfg.weight_decay, "adamw weight decay");
    train->add_option("--optimizer", cfg.optimizer, "adamw|sgd");
    train->add_flag("--cosine,!--no-cosine", cfg.cosine, "cosine lr decay");
    train->add_option("--seed", cfg.seed, "run seed");
    train->add_flag("--mixup", cfg.mixup, "mix-up in the first step");
    train->add_option("--class-order-seed", cfg.class_order_seed,
                      "shuffle class order (0 keeps ascending)");
    train->add_option("--out", cfg.out_dir, "output directory");

    std::string checkpoint, mode = "task-il", data_dir, out_path;
    int32_t task_id = 0;

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
    eval->add_option("--mode", mode, "task-il|class-il");
    eval->add_option("--data-dir", data_dir, "override the dataset directory");
    eval->add_option("--out", out_path, "accuracy CSV path (stdout when omitted)");

    CLI::App* ablate = app.add_subcommand("ablate", "token-by-task accuracy grid");
    ablate->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
    ablate->add_option("--data-dir", data_dir, "override the dataset directory");
    ablate->add_option("--out", out_path, "output directory")->default_val("out");

    CLI::App* forget = app.add_subcommand("forget", "remove one task's token and head");
    forget->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
    forget->add_option("--task", task_id, "task id to forget")->required();
    forget->add_option("--out", out_path, "output checkpoint (defaults to in-place)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return ticl::kExitConfig;
    }

    if (train->parsed()) return ticl::cmd_train(cfg);
    if (eval->parsed()) return ticl::cmd_eval(checkpoint, mode, data_dir, out_path);
    if (ablate->parsed()) return ticl::cmd_ablate(checkpoint, data_dir, out_path);
    if (forget->parsed()) return ticl::cmd_forget(checkpoint, task_id, out_path);
    return ticl::kExitConfig;
}
