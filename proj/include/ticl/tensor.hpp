#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "ticl/common.hpp"
#include "ticl/rng.hpp"

namespace ticl {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Shaped 32-bit float array, row-major, with an optional gradient slot.
/// Safe to share across threads for reading; single writer for mutation.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<float> values);
    Tensor(Shape shape, std::initializer_list<float> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, float value);
    static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f, float mean = 0.0f);
    static Tensor scalar(float value) { return Tensor({1}, {value}); }

    const Shape& shape() const { return shape_; }
    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(values.size()); }
    bool is_scalar() const { return numel() == 1; }

    float* data() { return values.data(); }
    const float* data() const { return values.data(); }
    std::span<const float> view() const { return values; }

    float item() const;

    bool requires_grad = false;
    std::vector<float> values;
    std::vector<float> grad; // empty means absent; same numel as values otherwise

    void ensure_grad();       // allocate + zero-fill the gradient slot
    void zero_grad();
    bool has_grad() const { return !grad.empty(); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    Shape shape_;
};

/// Named tensor with a freeze flag. Frozen parameters are bit-identical across
/// any sequence of backward/optimizer activity.
struct Parameter {
    Tensor tensor;
    std::string name;
    bool frozen = false;

    bool trainable() const { return !frozen && tensor.requires_grad; }
};

} // namespace ticl
