#include "cpattn/tensor.hpp"

#include <sstream>
#include <stdexcept>

namespace cpattn {

std::size_t checked_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0) {
            throw std::invalid_argument("tensor extents must be positive, got shape " +
                                        shape_str(shape));
        }
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<int> shape, double fill)
    : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (checked_numel(shape_) != data_.size()) {
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str(shape_));
    }
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    return t;
}

double Tensor::value() const {
    if (data_.size() != 1) {
        throw std::invalid_argument("expected scalar tensor, got shape " + shape_str(shape_));
    }
    return data_[0];
}

std::size_t Tensor::index(std::initializer_list<int> idx) const {
    std::size_t off = 0;
    std::size_t axis = 0;
    for (int i : idx) {
        off = off * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
        ++axis;
    }
    return off;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

}  // namespace cpattn
