#pragma once

#include "gtalk/io/image.hpp"
#include "gtalk/scene/camera.hpp"
#include "gtalk/scene/gaussian_set.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace gtalk::raster {

inline constexpr double kNearPlane = 0.01;
inline constexpr double kLowPassFloor = 0.3;          // px^2 added to the 2D covariance diagonal
inline constexpr double kMinBlendAlpha = 1.0 / 255.0; // contributions below this are skipped
// Tiled early exit. The skipped remainder changes a pixel by less than this
// value, so it also bounds the tiled vs reference difference.
inline constexpr double kTransmittanceCutoff = 1e-5;
inline constexpr int kTileSize = 16;

template <typename T>
struct BasicProjectedGaussian {
    std::uint32_t id = 0;  // row in the source GaussianSet
    T x = 0, y = 0;        // screen position in pixels
    T cov[3] = {};         // 2D covariance (xx, xy, yy) including the low-pass floor
    T conic[3] = {};       // its inverse (a, b, c)
    T depth = 0;           // camera-space z
    T rgb[3] = {};
    T opacity = 0;
    // Inclusive pixel range that can receive a contribution >= kMinBlendAlpha;
    // empty when min > max.
    int min_x = 0, max_x = -1, min_y = 0, max_y = -1;
};

template <typename T>
struct BasicProjection {
    int width = 0;
    int height = 0;
    std::size_t source_count = 0;
    std::size_t culled = 0;
    std::vector<BasicProjectedGaussian<T>> gaussians;
};

using ProjectedGaussian = BasicProjectedGaussian<double>;
using Projection = BasicProjection<double>;
using ProjectionF = BasicProjection<float>;

// One blended Gaussian at one pixel. `index` points into Projection::gaussians.
template <typename T>
struct BasicBlendRecord {
    std::uint32_t index = 0;
    T alpha = 0;          // alpha' actually used
    T transmittance = 0;  // transmittance before this Gaussian
};

template <typename T>
struct BasicRenderedFrame {
    BasicImage<T> image;
    BasicImage<T> background;
    bool has_records = false;
    // Per-pixel blend records live in chunks (one per tile for the tiled renderer).
    std::vector<std::vector<BasicBlendRecord<T>>> chunks;
    std::vector<std::uint32_t> pixel_chunk;
    std::vector<std::uint32_t> pixel_begin;
    std::vector<std::uint32_t> pixel_count;
    std::vector<T> final_transmittance;

    std::span<const BasicBlendRecord<T>> records(std::size_t pixel) const {
        return {chunks[pixel_chunk[pixel]].data() + pixel_begin[pixel], pixel_count[pixel]};
    }
};

using BlendRecord = BasicBlendRecord<double>;
using RenderedFrame = BasicRenderedFrame<double>;
using RenderedFrameF = BasicRenderedFrame<float>;

struct RenderOptions {
    bool keep_records = false;
};

// Projects every Gaussian (Sigma' = J W Sigma W^T J^T + floor). Gaussians with
// camera z <= kNearPlane are culled and counted. When `colors` (N x 3) is given
// it replaces SH shading.
Projection project(const GaussianSet& set, const Camera& cam, const diff::Array* colors = nullptr);

ProjectionF to_float(const Projection& p);

// Reference compositor: every pixel visits every projected Gaussian in
// (depth, id) order; no tiling, no early exit.
template <typename T>
BasicRenderedFrame<T> composite_reference(const BasicProjection<T>& projected, const BasicImage<T>& background,
                                          const RenderOptions& options = {});

// Tiled compositor: 16x16 tiles, per-tile exact depth sort, early exit once
// transmittance drops below kTransmittanceCutoff. Tiles run in parallel.
template <typename T>
BasicRenderedFrame<T> render_tiled(const BasicProjection<T>& projected, const BasicImage<T>& background,
                                   const RenderOptions& options = {});

struct SceneGradients {
    diff::Array positions;
    diff::Array rotations;
    diff::Array log_scales;
    diff::Array sh_coeffs;
    diff::Array opacity_logits;
    std::optional<diff::Array> colors;  // N x 3, only when requested
};

struct BackwardOptions {
    bool color_gradients = false;
    // Set when the projection was built with a color override.
    bool colors_overridden = false;
};

// Gradients of sum(grad_image * frame.image) with respect to the Gaussian set
// fields. Requires a frame rendered with keep_records.
SceneGradients render_backward(const RenderedFrame& frame, const Image& grad_image, const Projection& projected,
                               const GaussianSet& set, const Camera& cam, const BackwardOptions& options = {});

// Renders arbitrary per-Gaussian colors through the same compositing path.
Image render_colored(const GaussianSet& set, const diff::Array& colors, const Camera& cam, const Image& background);

// project + render_tiled.
Image render(const GaussianSet& set, const Camera& cam, const Image& background);

} // namespace gtalk::raster
