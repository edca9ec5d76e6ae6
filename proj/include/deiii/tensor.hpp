// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "deiii/errors.hpp"

namespace deiii {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major tensor. Shapes have rank >= 1 with strictly positive dims.
template <std::floating_point T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (data_.size() != shape_numel(shape_))
            throw std::invalid_argument("tensor: data length " + std::to_string(data_.size()) +
                                        " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    // 2-D convenience constructor from nested lists.
    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = rows.begin()->size();
        std::vector<T> buf;
        buf.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) throw std::invalid_argument("tensor: ragged matrix literal");
            buf.insert(buf.end(), row.begin(), row.end());
        }
        return Tensor(Shape{r, c}, std::move(buf));
    }

    static Tensor vector(std::initializer_list<T> vals) {
        return Tensor(Shape{vals.size()}, std::vector<T>(vals));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    // Rank-2 accessors.
    std::size_t rows() const { return shape_.at(0); }
    std::size_t cols() const { return rank() == 1 ? shape_[0] : shape_.at(1); }

    T& at(std::size_t i) { return data_[i]; }
    T at(std::size_t i) const { return data_[i]; }
    T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    T at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    void fill(T v) { data_.assign(data_.size(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

    template <std::floating_point U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return Tensor<U>(shape_, std::move(out));
    }

private:
    void validate_shape() const {
        if (shape_.empty()) throw std::invalid_argument("tensor: rank-0 shapes are not supported");
        for (std::size_t d : shape_)
            if (d == 0) throw std::invalid_argument("tensor: zero dimension in shape " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<T> data_;
};

template <std::floating_point T>
void ensure_finite(const Tensor<T>& t, const char* who) {
    if (!t.all_finite())
        throw NumericError(std::string(who) + ": non-finite value in tensor " + shape_str(t.shape()));
}

template <std::floating_point T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b))
        throw std::invalid_argument("max_abs_diff: shapes " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

}  // namespace deiii
