#include "gtalk/eval/metrics.hpp"

#include "gtalk/train/losses.hpp"
#include "gtalk/util/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gtalk::eval {

double mse(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ShapeError("metric: image sizes differ");
    if (a.data.empty()) throw ShapeError("metric: empty image");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.data.size());
}

double psnr(const Image& a, const Image& b) {
    const double m = mse(a, b);
    if (m <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, -10.0 * std::log10(m));
}

double ssim(const Image& a, const Image& b) { return train::ssim(a, b); }

} // namespace gtalk::eval
