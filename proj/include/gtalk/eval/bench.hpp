#pragma once

#include "gtalk/data/dataset.hpp"
#include "gtalk/scene/gaussian_set.hpp"
#include "gtalk/train/trainer.hpp"

#include <filesystem>

namespace gtalk::eval {

struct FpsReport {
    std::size_t frames = 0;
    std::size_t gaussians = 0;
    int width = 0, height = 0;
    double mean_fps = 0;
    // Mean milliseconds per frame for each stage.
    double encode_ms = 0;         // condition tokens
    double attend_deform_ms = 0;  // canonical attributes, attention, offsets
    double render_ms = 0;         // projection and 32-bit tiled compositing
};

// Inference over `frames` dataset frames (cycling), after `warmup` untimed frames.
FpsReport fps_benchmark(const train::Checkpoint& checkpoint, const data::Dataset& dataset, std::size_t frames,
                        std::size_t warmup = 3);

// CSV (one header, one row) and a short text summary.
void write_fps_report(const FpsReport& r, const std::filesystem::path& csv, const std::filesystem::path& txt);

struct RendererSpeed {
    double tiled_ms = 0;      // median over repeats
    double reference_ms = 0;  // median over repeats
    double ratio() const { return reference_ms / tiled_ms; }
};

// Both compositors on the same 32-bit projection.
RendererSpeed compare_renderers(const GaussianSet& set, const Camera& cam, const Image& background, int repeats = 3);

// Median milliseconds of project + 32-bit tiled render.
double time_tiled_render(const GaussianSet& set, const Camera& cam, const Image& background, int repeats = 5);

// Random scene of n small Gaussians spread over the view of a camera looking
// down +z from the origin; used by the performance checks.
GaussianSet benchmark_scene(std::size_t n, std::uint64_t seed, double spread = 1.0);
Camera benchmark_camera(int width, int height);

} // namespace gtalk::eval
