#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ticl/tensor.hpp"

namespace ticl {

enum class Split { train, test };

/// Immutable after load; freely shareable. The optional audit counter records
/// every per-sample access, which is how the no-rehearsal property is checked.
class LabeledImageSet {
public:
    LabeledImageSet() = default;
    LabeledImageSet(int64_t side, int64_t channels, Split split)
        : side_(side), channels_(channels), split_(split) {}

    int64_t size() const { return static_cast<int64_t>(labels_.size()); }
    int64_t side() const { return side_; }
    int64_t channels() const { return channels_; }
    Split split() const { return split_; }
    int64_t image_bytes() const { return channels_ * side_ * side_; }
    int64_t class_count() const;

    const uint8_t* image(int64_t i) const; // counts into the audit when attached
    int32_t label(int64_t i) const { return labels_[static_cast<size_t>(i)]; }
    std::span<const int32_t> labels() const { return labels_; }

    void append(const uint8_t* pixels, int32_t label);
    void reserve(int64_t n);

    /// Counter vector sized to size(); bumped once per image() call.
    void attach_audit(std::vector<uint32_t>* counters) const { audit_ = counters; }

    bool operator==(const LabeledImageSet& other) const;

private:
    int64_t side_ = 32;
    int64_t channels_ = 3;
    Split split_ = Split::train;
    std::vector<uint8_t> pixels_;
    std::vector<int32_t> labels_;
    mutable std::vector<uint32_t>* audit_ = nullptr;
};

/// Standard CIFAR-100 binary layout: 3,074-byte records, 1 coarse label byte
/// (discarded), 1 fine label byte, 3,072 pixel bytes channel-major. The train
/// file must hold 50,000 records and the test file 10,000.
std::pair<LabeledImageSet, LabeledImageSet> load_cifar100_binary(
    const std::string& train_path, const std::string& test_path);

/// Same record layout generalized to any image size: 1 coarse byte (written
/// as 0), 1 fine label byte, channels * side * side pixel bytes.
void save_flat_binary(const LabeledImageSet& set, const std::string& path);
LabeledImageSet load_flat_binary(const std::string& path, int64_t side,
                                 int64_t channels, Split split,
                                 int64_t expected_records = -1,
                                 int32_t max_label = -1);

/// Class-conditional color blobs plus seeded noise; deterministic per seed.
LabeledImageSet make_synthetic(int32_t class_count, int32_t per_class,
                               int64_t image_side, uint64_t seed,
                               Split split = Split::train);

struct ScenarioSpec {
    int32_t initial_classes = 0;             // first-step block (0 disables it)
    int32_t incremental_steps = 0;
    std::vector<int32_t> classes_per_step;   // sizes of the incremental steps
    std::vector<int32_t> class_order;        // permutation of all class labels
    uint64_t seed = 0;

    int32_t total_classes() const;
    int32_t step_count() const {
        return incremental_steps + (initial_classes > 0 ? 1 : 0);
    }
    void validate() const;
    std::vector<std::vector<int32_t>> step_class_lists() const;

    static ScenarioSpec b0(int32_t steps, int32_t total = 100);
    static ScenarioSpec b50(int32_t steps);
    /// `total` classes split evenly over `steps`, with an optional initial block.
    static ScenarioSpec uniform(int32_t steps, int32_t total, int32_t initial = 0);

    /// Replace the ascending default order with a seeded permutation.
    void shuffle_order(uint64_t order_seed);
};

struct StepView {
    int32_t step_index = 0; // 1-based
    std::vector<int32_t> classes;
    std::vector<int64_t> train_indices;
    std::vector<int64_t> test_indices;
    const LabeledImageSet* train_set = nullptr;
    const LabeledImageSet* test_set = nullptr;
};

std::vector<StepView> split_scenario(const LabeledImageSet& train,
                                     const LabeledImageSet& test,
                                     const ScenarioSpec& spec);

struct NormStats {
    std::vector<float> mean;
    std::vector<float> stddev;

    static NormStats cifar();          // widely used CIFAR channel statistics
    static NormStats unit(int64_t channels = 3); // plain [0,1] scaling
};

/// Bytes -> [0,1] -> (x - mean_c) / std_c, laid out B x C x S x S.
Tensor normalize_images(const LabeledImageSet& set, std::span<const int64_t> indices,
                        const NormStats& stats);
Tensor normalize_image(const LabeledImageSet& set, int64_t index, const NormStats& stats);

/// Dataset indices grouped into batches for one epoch: seeded shuffle (stable
/// in seed and epoch), every sample exactly once, final partial batch kept.
std::vector<std::vector<int64_t>> make_epoch_batches(const StepView& view,
                                                     int64_t batch_size,
                                                     uint64_t seed, bool shuffle,
                                                     int32_t epoch);

} // namespace ticl
