#include "rccr/tensor.hpp"

#include <cmath>
#include <sstream>

#include "rccr/errors.hpp"

namespace rccr {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
    for (std::size_t e : shape_) {
        if (e == 0) throw DimensionError("Tensor: zero extent in shape " + shape_str(shape_));
    }
    values_.assign(count(shape_), fill);
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.values_.assign(1, v);
    return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    for (std::size_t e : t.shape_) {
        if (e == 0) throw DimensionError("Tensor::from: zero extent in shape " + shape_str(t.shape_));
    }
    if (values.size() != count(t.shape_)) {
        throw DimensionError("Tensor::from: " + std::to_string(values.size()) +
                             " values for shape " + shape_str(t.shape_));
    }
    t.values_ = std::move(values);
    return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw DimensionError("Tensor::extent: axis " + std::to_string(axis) +
                             " out of range for shape " + shape_str(shape_));
    }
    return shape_[axis];
}

double Tensor::item() const {
    if (values_.size() != 1) {
        throw ContractError("Tensor::item: tensor of shape " + shape_str(shape_) +
                            " is not scalar");
    }
    return values_[0];
}

bool Tensor::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::size_t Tensor::count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> idx) const {
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
        off = off * shape_[axis] + i;
        ++axis;
    }
    return off;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

}  // namespace rccr
