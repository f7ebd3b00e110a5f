#include "ticl/tensor.hpp"

#include <sstream>

namespace ticl {

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
    values.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(Shape shape, std::vector<float> v) : values(std::move(v)), shape_(std::move(shape)) {
    if (static_cast<int64_t>(values.size()) != shape_numel(shape_)) {
        throw ShapeError("value count does not match shape " + shape_str(shape_));
    }
}

Tensor::Tensor(Shape shape, std::initializer_list<float> v)
    : Tensor(std::move(shape), std::vector<float>(v)) {}

Tensor Tensor::full(Shape shape, float value) {
    Tensor t(std::move(shape));
    for (float& x : t.values) x = value;
    return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, float stddev, float mean) {
    Tensor t(std::move(shape));
    for (float& x : t.values) x = static_cast<float>(rng.normal(mean, stddev));
    return t;
}

float Tensor::item() const {
    if (!is_scalar()) throw ShapeError("item() on non-scalar tensor " + shape_str(shape_));
    return values[0];
}

void Tensor::ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0f);
}

void Tensor::zero_grad() {
    for (float& g : grad) g = 0.0f;
}

} // namespace ticl
