#include "leak/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace leak {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_product(shape_)) {
        throw std::invalid_argument("Tensor: shape " + shape_string(shape_) + " expects " +
                                    std::to_string(shape_product(shape_)) + " values, got " +
                                    std::to_string(data_.size()));
    }
}

Tensor Tensor::scalar(double value) {
    Tensor t;
    t.data_.assign(1, value);
    return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    t.data_.assign(t.data_.size(), value);
    return t;
}

std::size_t Tensor::rows() const {
    if (shape_.size() != 2) throw std::logic_error("Tensor::rows: tensor is not 2-D: " + shape_string(shape_));
    return shape_[0];
}

std::size_t Tensor::cols() const {
    if (shape_.size() != 2) throw std::logic_error("Tensor::cols: tensor is not 2-D: " + shape_string(shape_));
    return shape_[1];
}

double& Tensor::at(std::size_t r, std::size_t c) {
    if (shape_.size() != 2 || r >= shape_[0] || c >= shape_[1]) {
        throw std::out_of_range("Tensor::at(" + std::to_string(r) + "," + std::to_string(c) +
                                "): shape is " + shape_string(shape_));
    }
    return data_[r * shape_[1] + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    return const_cast<Tensor*>(this)->at(r, c);
}

bool Tensor::all_finite() const noexcept {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
    if (shape.empty()) return "[scalar]";
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += 'x';
        s += std::to_string(shape[i]);
    }
    s += ']';
    return s;
}

} // namespace leak
