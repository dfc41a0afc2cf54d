#include "gtalk/scene/sh.hpp"

#include "gtalk/scene/gaussian_set.hpp"
#include "gtalk/util/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gtalk {

namespace {
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                          0.5462742152960396};
constexpr double kC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                          -0.4570457994644658, 1.445305721320277, -0.5900435899266435};
} // namespace

void sh_basis(const Eigen::Vector3d& dir, int degree, std::span<double> b, std::span<Eigen::Vector3d> g) {
    if (degree < 0 || degree > kMaxShDegree) throw Error("SH degree " + std::to_string(degree) + " outside [0,3]");
    const bool want_grad = !g.empty();
    const double x = dir.x(), y = dir.y(), z = dir.z();
    b[0] = kShC0;
    if (want_grad) g[0].setZero();
    if (degree < 1) return;
    b[1] = -kC1 * y;
    b[2] = kC1 * z;
    b[3] = -kC1 * x;
    if (want_grad) {
        g[1] = {0.0, -kC1, 0.0};
        g[2] = {0.0, 0.0, kC1};
        g[3] = {-kC1, 0.0, 0.0};
    }
    if (degree < 2) return;
    const double xx = x * x, yy = y * y, zz = z * z;
    b[4] = kC2[0] * x * y;
    b[5] = kC2[1] * y * z;
    b[6] = kC2[2] * (2.0 * zz - xx - yy);
    b[7] = kC2[3] * x * z;
    b[8] = kC2[4] * (xx - yy);
    if (want_grad) {
        g[4] = {kC2[0] * y, kC2[0] * x, 0.0};
        g[5] = {0.0, kC2[1] * z, kC2[1] * y};
        g[6] = {-2.0 * kC2[2] * x, -2.0 * kC2[2] * y, 4.0 * kC2[2] * z};
        g[7] = {kC2[3] * z, 0.0, kC2[3] * x};
        g[8] = {2.0 * kC2[4] * x, -2.0 * kC2[4] * y, 0.0};
    }
    if (degree < 3) return;
    b[9] = kC3[0] * y * (3.0 * xx - yy);
    b[10] = kC3[1] * x * y * z;
    b[11] = kC3[2] * y * (4.0 * zz - xx - yy);
    b[12] = kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = kC3[4] * x * (4.0 * zz - xx - yy);
    b[14] = kC3[5] * z * (xx - yy);
    b[15] = kC3[6] * x * (xx - 3.0 * yy);
    if (want_grad) {
        g[9] = {6.0 * kC3[0] * x * y, kC3[0] * (3.0 * xx - 3.0 * yy), 0.0};
        g[10] = {kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y};
        g[11] = {-2.0 * kC3[2] * x * y, kC3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * kC3[2] * y * z};
        g[12] = {-6.0 * kC3[3] * x * z, -6.0 * kC3[3] * y * z, kC3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)};
        g[13] = {kC3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * kC3[4] * x * y, 8.0 * kC3[4] * x * z};
        g[14] = {2.0 * kC3[5] * x * z, -2.0 * kC3[5] * y * z, kC3[5] * (xx - yy)};
        g[15] = {kC3[6] * (3.0 * xx - 3.0 * yy), -6.0 * kC3[6] * x * y, 0.0};
    }
}

Eigen::Vector3d eval_sh(std::span<const double> coeffs, const Eigen::Vector3d& view_dir, int degree) {
    if (degree < 0 || degree > kMaxShDegree) throw Error("SH degree " + std::to_string(degree) + " outside [0,3]");
    const std::size_t nb = sh_coeff_count(degree);
    if (coeffs.size() != 3 * nb)
        throw Error("eval_sh: expected " + std::to_string(3 * nb) + " coefficients for degree " + std::to_string(degree) +
                    ", got " + std::to_string(coeffs.size()));
    if (std::abs(view_dir.norm() - 1.0) > 1e-6) throw Error("eval_sh: view direction is not unit length");
    std::array<double, 16> basis{};
    sh_basis(view_dir, degree, basis);
    Eigen::Vector3d rgb(0.5, 0.5, 0.5);
    for (std::size_t j = 0; j < nb; ++j)
        for (int c = 0; c < 3; ++c) rgb[c] += basis[j] * coeffs[j * 3 + c];
    for (int c = 0; c < 3; ++c) rgb[c] = std::clamp(rgb[c], 0.0, 1.0);
    return rgb;
}

} // namespace gtalk
