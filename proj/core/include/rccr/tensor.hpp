#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace rccr {

/// Dense row-major tensor of 64-bit reals. Shapes are lists of positive
/// extents; a rank-0 tensor holds one scalar.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);

    static Tensor scalar(double v);
    static Tensor from(std::vector<std::size_t> shape, std::vector<double> values);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }
    std::size_t extent(std::size_t axis) const;

    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    double& at(std::initializer_list<std::size_t> idx) { return values_[offset(idx)]; }
    double at(std::initializer_list<std::size_t> idx) const { return values_[offset(idx)]; }

    /// Scalar content of a rank-0 or single-element tensor.
    double item() const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && values_ == other.values_;
    }

    static std::size_t count(const std::vector<std::size_t>& shape);

private:
    std::size_t offset(std::initializer_list<std::size_t> idx) const;

    std::vector<std::size_t> shape_;
    std::vector<double> values_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace rccr
