#pragma once

#include "gtalk/diffmath/array.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <span>

namespace gtalk {

inline constexpr std::size_t kDefaultGaussianCap = 50'000;

inline std::size_t sh_coeff_count(int degree) { return static_cast<std::size_t>((degree + 1) * (degree + 1)); }

// Explicit Gaussian scene. Rows are Gaussians.
//   positions       N x 3   world-space means
//   rotations       N x 4   quaternions (w, x, y, z); normalized before use
//   log_scales      N x 3   per-axis scale s = exp(log_scale)
//   sh_coeffs       N x 3(k+1)^2, laid out [basis][channel]
//   opacity_logits  N x 1   opacity = sigmoid(logit)
struct GaussianSet {
    int sh_degree = 1;
    diff::Array positions;
    diff::Array rotations;
    diff::Array log_scales;
    diff::Array sh_coeffs;
    diff::Array opacity_logits;

    static GaussianSet zeros(std::size_t n, int sh_degree);

    std::size_t size() const { return positions.empty() ? 0 : positions.dim(0); }

    // Throws DataError on inconsistent shapes, non-finite values, zero quaternions or N > cap.
    void validate(std::size_t cap = kDefaultGaussianCap) const;

    friend bool operator==(const GaussianSet&, const GaussianSet&) = default;
};

// Sigma = R S S^T R^T. The quaternion must be within 1e-3 of unit length
// (it is normalized internally); zero or far-from-unit quaternions throw.
Eigen::Matrix3d covariance_from(const Eigen::Vector4d& quat, const Eigen::Vector3d& scale);

// Rotation matrix of a unit quaternion (w, x, y, z).
Eigen::Matrix3d rotation_from_quaternion(const Eigen::Vector4d& q);

enum class InitSource { point_file, sphere };

// Sphere mode samples uniformly on the radius-0.5 sphere at the origin.
// Point-file mode reads ASCII "x y z" lines; if `count` differs from the file's
// vertex count the vertices are resampled with the seeded generator.
diff::Array init_positions(InitSource source, std::size_t count, std::uint64_t seed,
                           const std::filesystem::path& point_file = {});

std::vector<Eigen::Vector3d> read_point_file(const std::filesystem::path& path);
void write_point_file(const std::filesystem::path& path, const diff::Array& positions);

// Binary scene file: "GTSCENE\0", u32 version, u64 N, u32 degree, then float32
// blocks for each field in declaration order (little endian).
void save_scene(const GaussianSet& set, const std::filesystem::path& path);
GaussianSet load_scene(const std::filesystem::path& path, std::size_t cap = kDefaultGaussianCap);

} // namespace gtalk
