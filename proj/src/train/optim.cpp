#include "gtalk/train/optim.hpp"

#include "gtalk/util/error.hpp"

#include <algorithm>
#include <cmath>

namespace gtalk::train {

void Adam::update(std::size_t slot, Array& param, const Array& grad, double lr) {
    if (param.shape() != grad.shape())
        throw ShapeError("adam slot " + std::to_string(slot) + ": gradient " + diff::shape_string(grad.shape()) +
                         " does not match parameter " + diff::shape_string(param.shape()));
    if (steps_ == 0) throw Error("adam update before begin_step");
    if (moments_.size() <= slot) moments_.resize(slot + 1);
    Moments& mo = moments_[slot];
    if (mo.m.shape() != param.shape()) {
        if (!mo.m.empty())
            throw ShapeError("adam slot " + std::to_string(slot) + " changed shape without remap_rows");
        mo.m = Array::zeros_like(param);
        mo.v = Array::zeros_like(param);
    }
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    const double step = lr / c1, inv_c2 = 1.0 / c2;
    double* p = param.data();
    double* m = mo.m.data();
    double* v = mo.v.data();
    const double* g = grad.data();
    for (std::size_t i = 0, n = param.size(); i < n; ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + config_.eps);
    }
}

void Adam::remap_rows(std::size_t slot, const std::vector<std::int64_t>& source, std::size_t row_width) {
    if (slot >= moments_.size() || moments_[slot].m.empty()) return;
    Moments& mo = moments_[slot];
    const std::size_t old_rows = mo.m.size() / row_width;
    Moments out{Array({source.size(), row_width}), Array({source.size(), row_width})};
    for (std::size_t r = 0; r < source.size(); ++r) {
        if (source[r] < 0) continue;
        const auto s = static_cast<std::size_t>(source[r]);
        if (s >= old_rows) throw ShapeError("adam remap source row out of range");
        for (std::size_t c = 0; c < row_width; ++c) {
            out.m[r * row_width + c] = mo.m[s * row_width + c];
            out.v[r * row_width + c] = mo.v[s * row_width + c];
        }
    }
    mo = std::move(out);
}

double exponential_lr(double initial, double final, double t) {
    t = std::clamp(t, 0.0, 1.0);
    return initial * std::pow(final / initial, t);
}

} // namespace gtalk::train
