#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace cpattn {

// Dense n-dimensional array of doubles, row-major over the declared axis
// order. Rank 0 (empty shape) is a scalar with one element.
class Tensor {
public:
    Tensor() : data_(1, 0.0) {}

    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, double fill);
    Tensor(std::vector<int> shape, std::vector<double> values);

    static Tensor scalar(double v);

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::size_t numel() const { return data_.size(); }
    bool is_scalar() const { return data_.size() == 1; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int i) { return data_[index({i})]; }
    double at(int i) const { return data_[index({i})]; }
    double& at(int i, int j) { return data_[index({i, j})]; }
    double at(int i, int j) const { return data_[index({i, j})]; }
    double& at(int i, int j, int k) { return data_[index({i, j, k})]; }
    double at(int i, int j, int k) const { return data_[index({i, j, k})]; }
    double& at(int i, int j, int k, int l) { return data_[index({i, j, k, l})]; }
    double at(int i, int j, int k, int l) const { return data_[index({i, j, k, l})]; }

    double value() const;  // scalar access; throws if numel != 1

    std::size_t index(std::initializer_list<int> idx) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    void fill(double v);

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

std::string shape_str(const std::vector<int>& shape);

std::size_t checked_numel(const std::vector<int>& shape);

}  // namespace cpattn
