#include "ticl/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

#include "ticl/checkpoint.hpp"
#include "ticl/continual.hpp"
#include "ticl/data.hpp"
#include "ticl/kernels.hpp"
#include "ticl/metrics.hpp"
#include "ticl/svg.hpp"

namespace ticl {

namespace fs = std::filesystem;
using nlohmann::json;

void ExperimentConfig::validate() const {
    static const std::set<std::string> scenarios = {"b0-5", "b0-10", "b50-5", "b50-10", "custom"};
    static const std::set<std::string> datasets = {"cifar100", "synthetic"};
    static const std::set<std::string> presets = {"desk", "paper"};
    static const std::set<std::string> optimizers = {"adamw", "sgd"};
    if (!scenarios.count(scenario)) throw ConfigError("unknown scenario " + scenario);
    if (!datasets.count(dataset)) throw ConfigError("unknown dataset " + dataset);
    if (!presets.count(preset)) throw ConfigError("unknown encoder preset " + preset);
    if (!optimizers.count(optimizer)) throw ConfigError("unknown optimizer " + optimizer);
    if (scenario == "custom" && steps < 1) throw ConfigError("custom scenario needs steps >= 1");
    if (initial_classes < 0) throw ConfigError("initial_classes must be >= 0");
    if (classes < 2 || per_class_train < 1 || per_class_test < 1) {
        throw ConfigError("synthetic dataset shape is invalid");
    }
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (epochs < 1 || batch < 1) throw ConfigError("epochs and batch must be >= 1");
    if (lr <= 0.0) throw ConfigError("lr must be > 0");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

namespace {

int guard(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const StateError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckpoint;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

EncoderConfig preset_config(const std::string& name) {
    if (name == "paper") return EncoderConfig::paper();
    if (name == "desk") return EncoderConfig::desk();
    throw ConfigError("unknown encoder preset " + name);
}

json echo_config(const ExperimentConfig& c) {
    return json{{"scenario", c.scenario},
                {"dataset", c.dataset},
                {"data_dir", c.data_dir},
                {"preset", c.preset},
                {"steps", c.steps},
                {"initial_classes", c.initial_classes},
                {"classes", c.classes},
                {"per_class_train", c.per_class_train},
                {"per_class_test", c.per_class_test},
                {"lambda", c.lambda},
                {"epochs", c.epochs},
                {"batch", c.batch},
                {"lr", c.lr},
                {"weight_decay", c.weight_decay},
                {"optimizer", c.optimizer},
                {"cosine", c.cosine},
                {"seed", c.seed},
                {"mixup", c.mixup},
                {"class_order_seed", c.class_order_seed}};
}

ScenarioSpec scenario_from_config(const ExperimentConfig& cfg, int32_t dataset_classes) {
    ScenarioSpec spec;
    if (cfg.scenario == "b0-5") spec = ScenarioSpec::b0(5);
    else if (cfg.scenario == "b0-10") spec = ScenarioSpec::b0(10);
    else if (cfg.scenario == "b50-5") spec = ScenarioSpec::b50(5);
    else if (cfg.scenario == "b50-10") spec = ScenarioSpec::b50(10);
    else spec = ScenarioSpec::uniform(cfg.steps, dataset_classes, cfg.initial_classes);
    if (spec.total_classes() > dataset_classes) {
        throw ConfigError("scenario needs " + std::to_string(spec.total_classes()) +
                          " classes but the dataset has " + std::to_string(dataset_classes));
    }
    if (cfg.class_order_seed != 0) spec.shuffle_order(cfg.class_order_seed);
    return spec;
}

std::pair<LabeledImageSet, LabeledImageSet> dataset_from_config(const ExperimentConfig& cfg,
                                                                const EncoderConfig& enc) {
    if (cfg.dataset == "cifar100") {
        if (enc.image_side != 32) {
            throw ConfigError("cifar100 requires a 32-pixel encoder preset");
        }
        const fs::path dir(cfg.data_dir);
        return load_cifar100_binary((dir / "train.bin").string(), (dir / "test.bin").string());
    }
    LabeledImageSet train = make_synthetic(cfg.classes, cfg.per_class_train, enc.image_side,
                                           cfg.seed, Split::train);
    LabeledImageSet test = make_synthetic(cfg.classes, cfg.per_class_test, enc.image_side,
                                          cfg.seed, Split::test);
    return {std::move(train), std::move(test)};
}

LabeledImageSet test_set_from_echo(const json& echo, const EncoderConfig& enc,
                                   const std::string& data_dir_flag) {
    const std::string dataset = echo.value("dataset", "synthetic");
    if (dataset == "cifar100") {
        const std::string dir = data_dir_flag.empty()
                                    ? echo.value("data_dir", std::string("."))
                                    : data_dir_flag;
        return load_flat_binary((fs::path(dir) / "test.bin").string(), 32, 3, Split::test,
                                10000, 100);
    }
    return make_synthetic(echo.value("classes", 20), echo.value("per_class_test", 16),
                          enc.image_side, echo.value("seed", uint64_t{1}), Split::test);
}

std::vector<int64_t> task_test_indices(const LabeledImageSet& test,
                                       const std::vector<int32_t>& classes) {
    const std::set<int32_t> wanted(classes.begin(), classes.end());
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < test.size(); ++i) {
        if (wanted.count(test.label(i))) idx.push_back(i);
    }
    return idx;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os << text;
}

OptimConfig optim_from_config(const ExperimentConfig& cfg) {
    OptimConfig o;
    o.kind = cfg.optimizer == "sgd" ? OptimConfig::Kind::sgd : OptimConfig::Kind::adamw;
    o.lr = static_cast<float>(cfg.lr);
    o.weight_decay = static_cast<float>(cfg.weight_decay);
    o.cosine = cfg.cosine;
    return o;
}

} // namespace

int cmd_train(const ExperimentConfig& cfg) {
    return guard([&]() -> int {
        cfg.validate();
        const EncoderConfig enc = preset_config(cfg.preset);
        auto [train, test] = dataset_from_config(cfg, enc);
        const ScenarioSpec spec =
            scenario_from_config(cfg, static_cast<int32_t>(train.class_count()));
        const auto views = split_scenario(train, test, spec);

        fs::create_directories(cfg.out_dir);
        ContinualLearner learner(enc, static_cast<float>(cfg.lambda), cfg.seed);

        TrainConfig tcfg;
        tcfg.epochs = cfg.epochs;
        tcfg.batch_size = cfg.batch;
        tcfg.optim = optim_from_config(cfg);
        tcfg.mixup_first_step = cfg.mixup;
        tcfg.seed = cfg.seed;

        AccuracyMatrix matrix;
        const json echo = echo_config(cfg);
        for (const StepView& view : views) {
            learner.begin_step(view.classes);
            const auto history = learner.train_step(view, tcfg);
            std::cout << "step " << view.step_index << ": clf " << history.back().clf
                      << " distill " << history.back().distill << " total "
                      << history.back().total << "\n";

            for (int32_t j = 1; j <= view.step_index; ++j) {
                const StepView& tv = views[static_cast<size_t>(j - 1)];
                const Tensor images = normalize_images(test, tv.test_indices, tcfg.norm);
                const auto preds = learner.classify_batch(images, j, j);
                std::vector<int32_t> targets;
                for (int64_t i : tv.test_indices) targets.push_back(test.label(i));
                matrix.record(view.step_index, j, step_accuracy(preds, targets));
                matrix.set_sample_count(j, static_cast<int64_t>(tv.test_indices.size()));
            }

            char name[32];
            std::snprintf(name, sizeof(name), "step_%02d.ticl", view.step_index);
            save_checkpoint((fs::path(cfg.out_dir) / name).string(), learner, echo);
        }

        write_text(fs::path(cfg.out_dir) / "accuracy.csv", accuracy_csv(matrix));
        write_text(fs::path(cfg.out_dir) / "summary.csv", summary_csv(matrix));

        ChartSeries acc{"overall accuracy", {}, {}};
        for (int32_t t = 1; t <= matrix.steps(); ++t) {
            acc.x.push_back(t);
            acc.y.push_back(matrix.overall_accuracy(t));
        }
        write_text(fs::path(cfg.out_dir) / "accuracy.svg",
                   line_chart_svg("Accuracy per step", "step", "accuracy", {acc}));
        ChartSeries bwt{"bwt (pp)", {}, {}};
        for (int32_t t = 2; t <= matrix.steps(); ++t) {
            bwt.x.push_back(t);
            bwt.y.push_back(100.0 * matrix.backward_transfer(t));
        }
        write_text(fs::path(cfg.out_dir) / "bwt.svg",
                   line_chart_svg("Backward transfer per step", "step", "bwt (pp)", {bwt}));
        return kExitOk;
    });
}

int cmd_eval(const std::string& checkpoint_path, const std::string& mode,
             const std::string& data_dir, const std::string& out_csv) {
    return guard([&]() -> int {
        if (mode != "task-il" && mode != "class-il") {
            throw ConfigError("mode must be task-il or class-il");
        }
        json echo;
        const ContinualLearner learner = load_checkpoint(checkpoint_path, &echo);
        const auto ids = learner.task_ids();
        if (ids.empty()) throw ConfigError("checkpoint holds no tasks to evaluate");
        const LabeledImageSet test = test_set_from_echo(echo, learner.student().config(), data_dir);

        AccuracyMatrix matrix;
        const int32_t t = learner.current_step();
        for (int32_t id : ids) {
            const auto idx = task_test_indices(test, learner.head(id).classes);
            if (idx.empty()) throw DataError("no test samples for task " + std::to_string(id));
            const Tensor images = normalize_images(test, idx, NormStats::cifar());
            std::vector<int32_t> targets;
            for (int64_t i : idx) targets.push_back(test.label(i));
            std::vector<int32_t> preds;
            if (mode == "task-il") {
                preds = learner.classify_batch(images, id, id);
            } else {
                for (const auto& [task, cls] : learner.classify_class_il_batch(images)) {
                    preds.push_back(cls);
                }
            }
            matrix.record(t, id, step_accuracy(preds, targets));
            matrix.set_sample_count(id, static_cast<int64_t>(idx.size()));
        }
        const std::string csv = accuracy_csv(matrix);
        if (out_csv.empty()) {
            std::cout << csv;
        } else {
            write_text(out_csv, csv);
        }
        std::cout << "overall " << mode << " accuracy: " << matrix.overall_accuracy(t) << "\n";
        return kExitOk;
    });
}

int cmd_ablate(const std::string& checkpoint_path, const std::string& data_dir,
               const std::string& out_dir) {
    return guard([&]() -> int {
        json echo;
        const ContinualLearner learner = load_checkpoint(checkpoint_path, &echo);
        const auto ids = learner.task_ids();
        if (ids.size() < 2) throw ConfigError("token ablation needs at least 2 tasks");
        const LabeledImageSet test = test_set_from_echo(echo, learner.student().config(), data_dir);

        std::vector<TaskTestSet> tests;
        for (int32_t id : ids) {
            const auto idx = task_test_indices(test, learner.head(id).classes);
            if (idx.empty()) throw DataError("no test samples for task " + std::to_string(id));
            TaskTestSet ts;
            ts.task_id = id;
            ts.images = normalize_images(test, idx, NormStats::cifar());
            for (int64_t i : idx) ts.labels.push_back(test.label(i));
            tests.push_back(std::move(ts));
        }
        const auto grid = token_ablation_matrix(learner, tests);
        fs::create_directories(out_dir);
        write_text(fs::path(out_dir) / "ablation.csv", ablation_csv(grid, ids));
        write_text(fs::path(out_dir) / "ablation.svg",
                   heatmap_svg("Token x task accuracy", "task token", "task data", grid));
        return kExitOk;
    });
}

int cmd_forget(const std::string& checkpoint_path, int32_t task_id,
               const std::string& out_path) {
    return guard([&]() -> int {
        json echo;
        ContinualLearner learner = load_checkpoint(checkpoint_path, &echo);
        learner.forget_task(task_id);
        save_checkpoint(out_path.empty() ? checkpoint_path : out_path, learner, echo);
        return kExitOk;
    });
}

} // namespace ticl
