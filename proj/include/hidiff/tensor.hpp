#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hidiff {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline size_t shape_numel(const Shape& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
        n *= static_cast<size_t>(d);
    }
    return n;
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense row-major tensor. Most kernels view a tensor as a 2D matrix whose
// rows are the leading dimension (channels or tokens) and whose columns are
// everything else flattened (spatial positions).
template <std::floating_point T>
class Tensor {
public:
    using value_type = T;
    // packet-aligned, keeps vectorized reductions bitwise reproducible
    using Storage = std::vector<T, Eigen::aligned_allocator<T>>;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::initializer_list<T> values) : Tensor(std::move(shape), Storage(values)) {}
    Tensor(Shape shape, const std::vector<T>& values) : Tensor(std::move(shape), Storage(values.begin(), values.end())) {}
    Tensor(Shape shape, Storage values) : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != shape_numel(shape_)) {
            throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
        }
    }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const Shape& shape() const noexcept { return shape_; }
    size_t ndim() const noexcept { return shape_.size(); }
    int dim(size_t i) const { return shape_.at(i); }
    size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // 2D view: leading dimension by the rest.
    int rows() const { return shape_.empty() ? 1 : shape_[0]; }
    int cols() const {
        const int r = rows();
        return r == 0 ? 0 : static_cast<int>(data_.size() / static_cast<size_t>(r));
    }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    Storage& storage() noexcept { return data_; }
    const Storage& storage() const noexcept { return data_; }

    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    T& at(int r, int c) { return data_[static_cast<size_t>(r) * cols() + c]; }
    const T& at(int r, int c) const { return data_[static_cast<size_t>(r) * cols() + c]; }

    T& at(int c, int y, int x) {
        return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }
    const T& at(int c, int y, int x) const {
        return data_[(static_cast<size_t>(c) * shape_[1] + y) * shape_[2] + x];
    }

    Eigen::Map<RowMatrix<T>> matrix() { return {data_.data(), rows(), cols()}; }
    Eigen::Map<const RowMatrix<T>> matrix() const { return {data_.data(), rows(), cols()}; }

    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> array() {
        return {data_.data(), static_cast<Eigen::Index>(data_.size())};
    }
    Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> array() const {
        return {data_.data(), static_cast<Eigen::Index>(data_.size())};
    }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != data_.size()) {
            throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        return Tensor(std::move(shape), data_);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

    template <std::floating_point U>
    Tensor<U> cast() const {
        typename Tensor<U>::Storage out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    Storage data_;
};

}  // namespace hidiff
