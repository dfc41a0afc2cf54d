#pragma once

#include "gtalk/diffmath/tape.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace gtalk::tri {

using diff::Array;

enum Plane { kXY = 0, kYZ = 1, kZX = 2 };
inline constexpr const char* kPlaneNames[3] = {"xy", "yz", "zx"};

struct TriplaneConfig {
    std::vector<int> resolutions = {64, 128};
    int features = 64;  // per level
    Eigen::Vector3d lower = Eigen::Vector3d::Constant(-1.0);
    Eigen::Vector3d upper = Eigen::Vector3d::Constant(1.0);
    double init_range = 1e-2;
};

// Plane p of level l is stored as planes[l * 3 + p], an [R*R, H] array whose
// row (v * R + u) is the feature vector of texel (u, v). For the xy plane u
// follows x and v follows y; yz uses (y, z) and zx uses (z, x).
struct TriplaneGrid {
    std::vector<int> resolutions;
    int features = 0;
    Eigen::Vector3d lower, upper;
    std::vector<Array> planes;

    std::size_t levels() const { return resolutions.size(); }
    std::size_t feature_dim() const { return levels() * static_cast<std::size_t>(features); }
    std::size_t parameter_count() const;
    // Throws ShapeError / DataError if planes disagree with the layout.
    void validate() const;
};

// Uniform init in [-init_range, init_range]. Zero levels throws DataError.
TriplaneGrid make_grid(const TriplaneConfig& config, std::uint64_t seed);

// Interpolation state saved by query for query_backward.
struct QueryCache {
    struct Sample {
        std::uint32_t u0 = 0, v0 = 0;  // lower corner texel
        double fu = 0, fv = 0;         // fractional offsets in [0, 1]
        bool clamped_u = false, clamped_v = false;
    };
    std::size_t points = 0;
    // [point][level][plane]
    std::vector<Sample> samples;
    // Interpolated plane vectors, [point][level][plane][feature].
    std::vector<double> plane_values;
    std::size_t clamped_points = 0;
};

// N x 3 points -> N x F features (per level: Hadamard product of the three
// bilinear plane samples; levels concatenated). Points outside the bounds are
// clamped and a warning is logged.
Array query(const TriplaneGrid& grid, const Array& points, QueryCache* cache = nullptr);

struct QueryGradients {
    std::vector<Array> planes;  // same layout as TriplaneGrid::planes
    Array points;               // N x 3, empty unless requested
};

QueryGradients query_backward(const TriplaneGrid& grid, const QueryCache& cache, const Array& grad_features,
                              bool point_gradients);

// Tape node: inputs are the points (N x 3) and one var per plane holding the
// grid's values (usually leaf_ref of grid.planes). `grid` supplies the layout
// and must outlive the tape.
diff::Var query(const TriplaneGrid& grid, diff::Var points, std::span<const diff::Var> planes);

// Writes level<l>_<plane>.png for every plane: PCA of the texel vectors to 3
// components, each min-max scaled to [0, 255]. Returns the written paths.
std::vector<std::filesystem::path> export_pca_images(const TriplaneGrid& grid, const std::filesystem::path& out_dir);

// R x R x 3 PCA image of one plane in [0, 1]; constant planes give 0.5.
std::vector<double> pca_plane_image(const Array& plane, int resolution);

} // namespace gtalk::tri
