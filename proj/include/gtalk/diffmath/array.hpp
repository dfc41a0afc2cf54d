#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace gtalk::diff {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Every dimension is positive; a scalar is
// represented with shape {1}.
class Array {
public:
    Array() = default;
    explicit Array(Shape shape, double fill = 0.0);
    Array(Shape shape, std::vector<double> values);
    Array(Shape shape, std::initializer_list<double> values);

    static Array scalar(double v) { return Array({1}, std::vector<double>{v}); }
    static Array zeros_like(const Array& other) { return Array(other.shape_); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D accessors; rank must be 2.
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    double item() const;
    bool all_finite() const;
    void fill(double v);
    // In-place accumulate; shapes must match.
    Array& operator+=(const Array& other);

    Array reshaped(Shape shape) const;

    friend bool operator==(const Array&, const Array&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

double max_abs_diff(const Array& a, const Array& b);

} // namespace gtalk::diff
