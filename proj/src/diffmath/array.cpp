#include "gtalk/diffmath/array.hpp"

#include "gtalk/util/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gtalk::diff {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace {
void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("array shape must have at least one dimension");
    for (auto d : shape)
        if (d == 0) throw ShapeError("array shape " + shape_string(shape) + " has a zero dimension");
}
} // namespace

Array::Array(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), fill);
}

Array::Array(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_))
        throw ShapeError("array shape " + shape_string(shape_) + " does not match " + std::to_string(data_.size()) +
                         " values");
}

Array::Array(Shape shape, std::initializer_list<double> values)
    : Array(std::move(shape), std::vector<double>(values)) {}

double Array::item() const {
    if (data_.size() != 1) throw ShapeError("item() on array of shape " + shape_string(shape_));
    return data_[0];
}

bool Array::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Array::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Array& Array::operator+=(const Array& other) {
    if (other.shape_ != shape_)
        throw ShapeError("accumulate: shape " + shape_string(shape_) + " vs " + shape_string(other.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Array Array::reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
        throw ShapeError("reshape: " + shape_string(shape_) + " -> " + shape_string(shape));
    return Array(std::move(shape), data_);
}

double max_abs_diff(const Array& a, const Array& b) {
    if (a.shape() != b.shape()) throw ShapeError("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace gtalk::diff
