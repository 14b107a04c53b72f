#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgaf/rng.hpp"

namespace tgaf {

// Dense row-major tensor of rank <= 4. The scalar type is a template
// parameter: production code runs float, numerical tests run double.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), T(0));
    }

    Tensor(std::initializer_list<std::size_t> shape)
        : Tensor(std::vector<std::size_t>(shape)) {}

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // Indexed access for the common ranks; no bounds checks in release paths.
    T& at3(std::size_t c, std::size_t h, std::size_t w) {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }
    const T& at3(std::size_t c, std::size_t h, std::size_t w) const {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }
    T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    void fill_normal(RngStream& rng, T mean = T(0), T stddev = T(1)) {
        for (T& v : data_) v = mean + stddev * static_cast<T>(rng.next_normal());
    }

    void fill_uniform(RngStream& rng, T lo, T hi) {
        for (T& v : data_) v = static_cast<T>(rng.next_uniform(lo, hi));
    }

    bool all_finite() const {
        for (T v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    T min() const {
        T m = data_.empty() ? T(0) : data_[0];
        for (T v : data_) m = std::min(m, v);
        return m;
    }

    T max() const {
        T m = data_.empty() ? T(0) : data_[0];
        for (T v : data_) m = std::max(m, v);
        return m;
    }

    T abs_max() const {
        T m = T(0);
        for (T v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    double mean() const {
        if (data_.empty()) return 0.0;
        double s = 0.0;
        for (T v : data_) s += static_cast<double>(v);
        return s / static_cast<double>(data_.size());
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    static std::string shape_str(const std::vector<std::size_t>& shape) {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<T> data_;
};

template <typename T>
void require_shape(const Tensor<T>& t, const std::vector<std::size_t>& shape,
                   const char* what) {
    if (t.shape() != shape) {
        throw std::invalid_argument(std::string(what) + ": expected shape " +
                                    Tensor<T>::shape_str(shape) + ", got " +
                                    Tensor<T>::shape_str(t.shape()));
    }
}

}  // namespace tgaf
