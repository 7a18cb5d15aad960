#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace hcp::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// A tensor that does not require grad never holds one; turning
/// requires_grad off drops any accumulated gradient.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    // Negative indices count from the back, as in dim(-1) for the last extent.
    std::size_t dim(int i) const;

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool on);

    bool has_grad() const noexcept { return !grad_.empty(); }
    std::span<const double> grad() const noexcept { return grad_; }
    void zero_grad();
    void accumulate_grad(std::span<const double> g);

    Tensor reshaped(Shape shape) const;

private:
    Shape shape_;
    std::vector<double> data_;
    std::vector<double> grad_;
    bool requires_grad_ = false;
};

}  // namespace hcp::ad
