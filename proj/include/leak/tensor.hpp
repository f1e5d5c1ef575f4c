#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace leak {

// Dense row-major double tensor. Rank 0 (shape {}) is a scalar with one
// element. Values are treated as immutable once a tensor is handed to the
// graph; mutation happens only through freshly constructed tensors.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double value);
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t ndim() const noexcept { return shape_.size(); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool is_scalar() const noexcept { return data_.size() == 1; }

    // 2-D accessors; throw unless ndim() == 2.
    std::size_t rows() const;
    std::size_t cols() const;
    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// "[2x3]" — used by every shape-mismatch error message.
std::string shape_string(const std::vector<std::size_t>& shape);
inline std::string shape_string(const Tensor& t) { return shape_string(t.shape()); }

} // namespace leak
