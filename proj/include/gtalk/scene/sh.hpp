#pragma once

#include <Eigen/Core>

#include <array>
#include <span>

namespace gtalk {

inline constexpr int kMaxShDegree = 3;
inline constexpr double kShC0 = 0.28209479177387814;

// Real SH basis in the usual splatting order and sign convention, evaluated at a
// unit direction. Fills the first (degree+1)^2 entries of `basis`; when `grad` is
// given it also receives d basis / d direction.
void sh_basis(const Eigen::Vector3d& dir, int degree, std::span<double> basis,
              std::span<Eigen::Vector3d> grad = {});

// Color of one Gaussian seen along `view_dir`: clamp(sum_j c_j Y_j(dir) + 0.5, 0, 1).
// `coeffs` holds (degree+1)^2 x 3 values laid out [basis][channel].
Eigen::Vector3d eval_sh(std::span<const double> coeffs, const Eigen::Vector3d& view_dir, int degree);

} // namespace gtalk
