#include "hcp/tensor.hpp"

#include <sstream>

#include "hcp/errors.hpp"

namespace hcp::ad {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {
void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (auto e : shape)
        if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_size(shape_) != data_.size())
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
}

std::size_t Tensor::dim(int i) const {
    const int r = static_cast<int>(shape_.size());
    const int k = i < 0 ? r + i : i;
    if (k < 0 || k >= r) throw BoundsError("dimension index out of range for " + shape_str(shape_));
    return shape_[static_cast<std::size_t>(k)];
}

void Tensor::set_requires_grad(bool on) {
    requires_grad_ = on;
    if (!on) grad_.clear();
}

void Tensor::zero_grad() {
    if (requires_grad_) grad_.assign(data_.size(), 0.0);
}

void Tensor::accumulate_grad(std::span<const double> g) {
    if (!requires_grad_) return;
    if (g.size() != data_.size()) throw ShapeError("gradient length does not match tensor " + shape_str(shape_));
    if (grad_.empty()) grad_.assign(data_.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) grad_[i] += g[i];
}

Tensor Tensor::reshaped(Shape shape) const {
    Tensor out(std::move(shape), data_);
    return out;
}

}  // namespace hcp::ad
