#include "ticl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "ticl/common.hpp"

namespace ticl {

int64_t LabeledImageSet::class_count() const {
    int32_t mx = -1;
    for (int32_t l : labels_) mx = std::max(mx, l);
    return mx + 1;
}

const uint8_t* LabeledImageSet::image(int64_t i) const {
    if (i < 0 || i >= size()) throw DataError("image index out of range");
    if (audit_) ++(*audit_)[static_cast<size_t>(i)];
    return pixels_.data() + i * image_bytes();
}

void LabeledImageSet::append(const uint8_t* pixels, int32_t label) {
    pixels_.insert(pixels_.end(), pixels, pixels + image_bytes());
    labels_.push_back(label);
}

void LabeledImageSet::reserve(int64_t n) {
    pixels_.reserve(static_cast<size_t>(n * image_bytes()));
    labels_.reserve(static_cast<size_t>(n));
}

bool LabeledImageSet::operator==(const LabeledImageSet& other) const {
    return side_ == other.side_ && channels_ == other.channels_ &&
           pixels_ == other.pixels_ && labels_ == other.labels_;
}

namespace {

LabeledImageSet load_records(const std::string& path, int64_t side, int64_t channels,
                             Split split, int64_t expected, int32_t max_label) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset file " + path);
    const int64_t file_size = static_cast<int64_t>(std::filesystem::file_size(path));
    const int64_t record = 2 + channels * side * side;
    if (file_size % record != 0) {
        throw DataError("truncated dataset file " + path + ": size " +
                        std::to_string(file_size) + " is not a multiple of " +
                        std::to_string(record));
    }
    const int64_t count = file_size / record;
    if (expected >= 0 && count != expected) {
        throw DataError("wrong record count in " + path + ": expected " +
                        std::to_string(expected) + ", found " + std::to_string(count));
    }
    LabeledImageSet set(side, channels, split);
    set.reserve(count);
    std::vector<uint8_t> buf(static_cast<size_t>(record));
    for (int64_t i = 0; i < count; ++i) {
        in.read(reinterpret_cast<char*>(buf.data()), record);
        if (!in) throw DataError("read failed in " + path);
        const int32_t fine = buf[1]; // buf[0] is the coarse label, unused
        if (max_label >= 0 && fine >= max_label) {
            throw DataError("label byte " + std::to_string(fine) + " out of range in " + path);
        }
        set.append(buf.data() + 2, fine);
    }
    return set;
}

} // namespace

std::pair<LabeledImageSet, LabeledImageSet> load_cifar100_binary(
    const std::string& train_path, const std::string& test_path) {
    LabeledImageSet train = load_records(train_path, 32, 3, Split::train, 50000, 100);
    LabeledImageSet test = load_records(test_path, 32, 3, Split::test, 10000, 100);
    return {std::move(train), std::move(test)};
}

void save_flat_binary(const LabeledImageSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write dataset file " + path);
    for (int64_t i = 0; i < set.size(); ++i) {
        const uint8_t coarse = 0;
        const uint8_t fine = static_cast<uint8_t>(set.label(i));
        out.put(static_cast<char>(coarse));
        out.put(static_cast<char>(fine));
        out.write(reinterpret_cast<const char*>(set.image(i)), set.image_bytes());
    }
    if (!out) throw DataError("write failed for " + path);
}

LabeledImageSet load_flat_binary(const std::string& path, int64_t side, int64_t channels,
                                 Split split, int64_t expected_records, int32_t max_label) {
    return load_records(path, side, channels, split, expected_records, max_label);
}

namespace {

// hue in [0,1) -> rgb in [0,1], s=v=1 wheel
void hue_to_rgb(double hue, double rgb[3]) {
    const double h = hue * 6.0;
    const int sector = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double q = 1.0 - f;
    switch (sector) {
    case 0: rgb[0] = 1; rgb[1] = f; rgb[2] = 0; break;
    case 1: rgb[0] = q; rgb[1] = 1; rgb[2] = 0; break;
    case 2: rgb[0] = 0; rgb[1] = 1; rgb[2] = f; break;
    case 3: rgb[0] = 0; rgb[1] = q; rgb[2] = 1; break;
    case 4: rgb[0] = f; rgb[1] = 0; rgb[2] = 1; break;
    default: rgb[0] = 1; rgb[1] = 0; rgb[2] = q; break;
    }
}

} // namespace

LabeledImageSet make_synthetic(int32_t class_count, int32_t per_class,
                               int64_t image_side, uint64_t seed, Split split) {
    if (class_count < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
    if (per_class < 1 || image_side < 4) {
        throw ConfigError("synthetic dataset needs per_class >= 1 and side >= 4");
    }
    LabeledImageSet set(image_side, 3, split);
    set.reserve(static_cast<int64_t>(class_count) * per_class);
    Rng rng(seed ^ (split == Split::test ? 0x7e57da7aULL : 0));
    const double s = static_cast<double>(image_side);
    std::vector<uint8_t> img(static_cast<size_t>(3 * image_side * image_side));

    constexpr double golden = 0.61803398874989484820;
    for (int32_t c = 0; c < class_count; ++c) {
        // class signature: hue from the golden-angle wheel, center on a ring
        double rgb[3];
        hue_to_rgb(std::fmod(golden * c, 1.0), rgb);
        const double angle = 2.0 * std::numbers::pi * c / class_count + 0.7;
        const double cx0 = 0.5 * s + 0.28 * s * std::cos(angle);
        const double cy0 = 0.5 * s + 0.28 * s * std::sin(angle);
        const double radius = s * (0.16 + 0.04 * ((c * 7) % 3));

        for (int32_t k = 0; k < per_class; ++k) {
            const double cx = cx0 + rng.normal(0.0, 0.05 * s);
            const double cy = cy0 + rng.normal(0.0, 0.05 * s);
            const double amp = 180.0 * (0.85 + 0.3 * rng.next_unit());
            for (int64_t ch = 0; ch < 3; ++ch) {
                for (int64_t y = 0; y < image_side; ++y) {
                    for (int64_t x = 0; x < image_side; ++x) {
                        const double dx = static_cast<double>(x) - cx;
                        const double dy = static_cast<double>(y) - cy;
                        const double blob =
                            amp * rgb[ch] * std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
                        const double value = 30.0 + blob + rng.normal(0.0, 12.0);
                        img[static_cast<size_t>(ch * image_side * image_side + y * image_side + x)] =
                            static_cast<uint8_t>(std::clamp(value, 0.0, 255.0));
                    }
                }
            }
            set.append(img.data(), c);
        }
    }
    return set;
}

int32_t ScenarioSpec::total_classes() const {
    int32_t total = initial_classes;
    for (int32_t c : classes_per_step) total += c;
    return total;
}

void ScenarioSpec::validate() const {
    if (initial_classes < 0) throw ConfigError("initial_classes must be >= 0");
    if (incremental_steps != static_cast<int32_t>(classes_per_step.size())) {
        throw ConfigError("classes_per_step length must equal incremental_steps");
    }
    for (int32_t c : classes_per_step) {
        if (c <= 0) throw ConfigError("classes_per_step entries must be positive");
    }
    if (step_count() < 1) throw ConfigError("scenario needs at least one step");
    if (static_cast<int32_t>(class_order.size()) != total_classes()) {
        throw ConfigError("class_order must cover every class exactly once");
    }
    std::set<int32_t> seen(class_order.begin(), class_order.end());
    if (static_cast<int32_t>(seen.size()) != total_classes()) {
        throw ConfigError("class_order contains duplicates");
    }
}

std::vector<std::vector<int32_t>> ScenarioSpec::step_class_lists() const {
    validate();
    std::vector<std::vector<int32_t>> lists;
    size_t cursor = 0;
    auto take = [&](int32_t n) {
        std::vector<int32_t> cls(class_order.begin() + static_cast<int64_t>(cursor),
                                 class_order.begin() + static_cast<int64_t>(cursor) + n);
        cursor += static_cast<size_t>(n);
        return cls;
    };
    if (initial_classes > 0) lists.push_back(take(initial_classes));
    for (int32_t c : classes_per_step) lists.push_back(take(c));
    return lists;
}

namespace {

std::vector<int32_t> ascending_order(int32_t total) {
    std::vector<int32_t> order(static_cast<size_t>(total));
    for (int32_t i = 0; i < total; ++i) order[static_cast<size_t>(i)] = i;
    return order;
}

} // namespace

ScenarioSpec ScenarioSpec::b0(int32_t steps, int32_t total) {
    if (steps <= 0 || total % steps != 0) {
        throw ConfigError("b0 scenario needs steps dividing the class count");
    }
    ScenarioSpec spec;
    spec.incremental_steps = steps;
    spec.classes_per_step.assign(static_cast<size_t>(steps), total / steps);
    spec.class_order = ascending_order(total);
    return spec;
}

ScenarioSpec ScenarioSpec::b50(int32_t steps) {
    if (steps <= 0 || 50 % steps != 0) {
        throw ConfigError("b50 scenario needs steps dividing 50");
    }
    ScenarioSpec spec;
    spec.initial_classes = 50;
    spec.incremental_steps = steps;
    spec.classes_per_step.assign(static_cast<size_t>(steps), 50 / steps);
    spec.class_order = ascending_order(100);
    return spec;
}

ScenarioSpec ScenarioSpec::uniform(int32_t steps, int32_t total, int32_t initial) {
    if (steps <= 0 || total <= initial || (total - initial) % steps != 0) {
        throw ConfigError("uniform scenario needs steps dividing the remaining classes");
    }
    ScenarioSpec spec;
    spec.initial_classes = initial;
    spec.incremental_steps = steps;
    spec.classes_per_step.assign(static_cast<size_t>(steps), (total - initial) / steps);
    spec.class_order = ascending_order(total);
    return spec;
}

void ScenarioSpec::shuffle_order(uint64_t order_seed) {
    Rng rng(order_seed);
    rng.shuffle(class_order);
    seed = order_seed;
}

std::vector<StepView> split_scenario(const LabeledImageSet& train,
                                     const LabeledImageSet& test,
                                     const ScenarioSpec& spec) {
    const auto lists = spec.step_class_lists(); // validates
    if (spec.total_classes() > train.class_count()) {
        throw ConfigError("scenario refers to more classes than the dataset holds");
    }
    std::vector<StepView> views;
    views.reserve(lists.size());
    for (size_t s = 0; s < lists.size(); ++s) {
        StepView view;
        view.step_index = static_cast<int32_t>(s + 1);
        view.classes = lists[s];
        view.train_set = &train;
        view.test_set = &test;
        const std::set<int32_t> wanted(view.classes.begin(), view.classes.end());
        for (int64_t i = 0; i < train.size(); ++i) {
            if (wanted.count(train.label(i))) view.train_indices.push_back(i);
        }
        for (int64_t i = 0; i < test.size(); ++i) {
            if (wanted.count(test.label(i))) view.test_indices.push_back(i);
        }
        views.push_back(std::move(view));
    }
    return views;
}

NormStats NormStats::cifar() {
    return NormStats{{0.5071f, 0.4865f, 0.4409f}, {0.2673f, 0.2564f, 0.2762f}};
}

NormStats NormStats::unit(int64_t channels) {
    NormStats st;
    st.mean.assign(static_cast<size_t>(channels), 0.0f);
    st.stddev.assign(static_cast<size_t>(channels), 1.0f);
    return st;
}

Tensor normalize_images(const LabeledImageSet& set, std::span<const int64_t> indices,
                        const NormStats& stats) {
    const int64_t c = set.channels();
    const int64_t s = set.side();
    if (static_cast<int64_t>(stats.mean.size()) != c ||
        static_cast<int64_t>(stats.stddev.size()) != c) {
        throw ConfigError("normalization stats channel count mismatch");
    }
    Tensor out({static_cast<int64_t>(indices.size()), c, s, s});
    float* dst = out.data();
    for (int64_t idx : indices) {
        const uint8_t* src = set.image(idx);
        for (int64_t ch = 0; ch < c; ++ch) {
            const float mean = stats.mean[static_cast<size_t>(ch)];
            const float inv_std = 1.0f / stats.stddev[static_cast<size_t>(ch)];
            for (int64_t p = 0; p < s * s; ++p) {
                const float unit = static_cast<float>(src[ch * s * s + p]) / 255.0f;
                *dst++ = (unit - mean) * inv_std;
            }
        }
    }
    return out;
}

Tensor normalize_image(const LabeledImageSet& set, int64_t index, const NormStats& stats) {
    const int64_t idx[1] = {index};
    Tensor batch = normalize_images(set, idx, stats);
    return Tensor(Shape{batch.dim(1), batch.dim(2), batch.dim(3)}, std::move(batch.values));
}

std::vector<std::vector<int64_t>> make_epoch_batches(const StepView& view,
                                                     int64_t batch_size,
                                                     uint64_t seed, bool shuffle,
                                                     int32_t epoch) {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (view.train_indices.empty()) throw DataError("step view has no training samples");
    std::vector<int64_t> order = view.train_indices;
    if (shuffle) {
        Rng rng = Rng(seed).fork(0x5bf03635ULL + static_cast<uint64_t>(epoch) * 1315423911ULL +
                                 static_cast<uint64_t>(view.step_index));
        rng.shuffle(order);
    }
    std::vector<std::vector<int64_t>> batches;
    for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(order.size(), at + static_cast<size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<int64_t>(at),
                             order.begin() + static_cast<int64_t>(end));
    }
    return batches;
}

} // namespace ticl
