#include "gtalk/eval/bench.hpp"

#include "gtalk/raster/rasterizer.hpp"
#include "gtalk/util/error.hpp"
#include "gtalk/util/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace gtalk::eval {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t) { return std::chrono::duration<double, std::milli>(Clock::now() - t).count(); }

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

ImageF to_float_image(const Image& img) { return img.cast<float>(); }

} // namespace

FpsReport fps_benchmark(const train::Checkpoint& checkpoint, const data::Dataset& dataset, std::size_t frames,
                        std::size_t warmup) {
    if (dataset.frames.empty()) throw DataError("benchmark dataset has no frames");
    if (frames == 0) throw DataError("benchmark needs at least one frame");
    const auto& can = checkpoint.canonical;

    // Frame-independent canonical attributes, computed once.
    diff::Tape base;
    const auto cb = model::bind(base, can, false);
    const auto out = model::record_canonical(can, cb);
    const diff::Array features = out.features.value(), positions = out.positions.value(), rotations = out.rotations.value(),
                      log_scales = out.log_scales.value(), sh = out.sh_coeffs.value(), alpha = out.opacity_logits.value();
    const GaussianSet canonical_set = model::to_gaussian_set(out, can.config.sh_degree);
    const ImageF background = to_float_image(from_8bit(dataset.frames.front().background));

    FpsReport r;
    r.frames = frames;
    r.gaussians = can.size();
    r.width = background.width;
    r.height = background.height;
    double encode = 0, deform = 0, render = 0;
    volatile float sink = 0;
    for (std::size_t k = 0; k < warmup + frames; ++k) {
        const auto& f = dataset.frames[k % dataset.frames.size()];
        const bool timed = k >= warmup;
        GaussianSet set;
        if (checkpoint.deform) {
            const auto& m = *checkpoint.deform;
            diff::Tape tape;
            const auto bound = m.params.bind(tape, false);
            auto t0 = Clock::now();
            const auto tokens = model::encode_conditions(m, bound, f.condition, tape);
            const double e = ms_since(t0);
            t0 = Clock::now();
            model::CanonicalOutputs c{tape.leaf_ref(features, false), tape.leaf_ref(positions, false),
                                      tape.leaf_ref(rotations, false), tape.leaf_ref(log_scales, false),
                                      tape.leaf_ref(sh, false),       tape.leaf_ref(alpha, false)};
            const auto z0 = model::embed_features(m, bound, c.features);
            const auto att = model::attend(m, bound, z0, tokens);
            const auto off = model::predict_offsets(m, bound, att.z);
            set = model::to_gaussian_set(model::deform(c, off), can.config.sh_degree);
            const double d = ms_since(t0);
            if (timed) encode += e, deform += d;
        } else {
            set = canonical_set;
        }
        const auto t0 = Clock::now();
        const auto proj = raster::to_float(raster::project(set, f.condition.camera));
        const auto img = raster::render_tiled(proj, background);
        sink = sink + img.image.data[0];
        if (timed) render += ms_since(t0);
    }
    const double n = static_cast<double>(frames);
    r.encode_ms = encode / n;
    r.attend_deform_ms = deform / n;
    r.render_ms = render / n;
    const double total = r.encode_ms + r.attend_deform_ms + r.render_ms;
    r.mean_fps = total > 0 ? 1000.0 / total : 0.0;
    return r;
}

void write_fps_report(const FpsReport& r, const std::filesystem::path& csv, const std::filesystem::path& txt) {
    std::ofstream c(csv);
    if (!c) throw Error("cannot write " + csv.string());
    char line[512];
    std::snprintf(line, sizeof line,
                  "frames,gaussians,width,height,mean_fps,encode_ms,attend_deform_ms,render_ms\n%zu,%zu,%d,%d,%.3f,%.4f,%.4f,%.4f\n",
                  r.frames, r.gaussians, r.width, r.height, r.mean_fps, r.encode_ms, r.attend_deform_ms, r.render_ms);
    c << line;
    std::ofstream t(txt);
    if (!t) throw Error("cannot write " + txt.string());
    std::snprintf(line, sizeof line,
                  "%zu frames, %zu Gaussians at %dx%d\n"
                  "mean fps          %.2f\n"
                  "condition encode  %.3f ms\n"
                  "attend + deform   %.3f ms\n"
                  "render (float32)  %.3f ms\n",
                  r.frames, r.gaussians, r.width, r.height, r.mean_fps, r.encode_ms, r.attend_deform_ms, r.render_ms);
    t << line;
}

RendererSpeed compare_renderers(const GaussianSet& set, const Camera& cam, const Image& background, int repeats) {
    const auto proj = raster::to_float(raster::project(set, cam));
    const ImageF bg = to_float_image(background);
    std::vector<double> tiled, reference;
    volatile float sink = 0;
    for (int i = 0; i < std::max(1, repeats); ++i) {
        auto t0 = Clock::now();
        sink = sink + raster::render_tiled(proj, bg).image.data[0];
        tiled.push_back(ms_since(t0));
        t0 = Clock::now();
        sink = sink + raster::composite_reference(proj, bg).image.data[0];
        reference.push_back(ms_since(t0));
    }
    return {median(tiled), median(reference)};
}

double time_tiled_render(const GaussianSet& set, const Camera& cam, const Image& background, int repeats) {
    const ImageF bg = to_float_image(background);
    std::vector<double> t;
    volatile float sink = 0;
    for (int i = 0; i < std::max(1, repeats); ++i) {
        const auto t0 = Clock::now();
        const auto proj = raster::to_float(raster::project(set, cam));
        sink = sink + raster::render_tiled(proj, bg).image.data[0];
        t.push_back(ms_since(t0));
    }
    return median(t);
}

GaussianSet benchmark_scene(std::size_t n, std::uint64_t seed, double spread) {
    Rng rng(derive_seed(seed, 0x62656e6368ull));
    GaussianSet s = GaussianSet::zeros(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const double z = rng.uniform(2.0, 4.0);
        s.positions.at(i, 0) = rng.uniform(-0.5, 0.5) * spread * z;
        s.positions.at(i, 1) = rng.uniform(-0.5, 0.5) * spread * z;
        s.positions.at(i, 2) = z;
        const double q[4] = {rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        const double qn = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
        for (int k = 0; k < 4; ++k) s.rotations.at(i, k) = q[k] / qn;
        for (int k = 0; k < 3; ++k) s.log_scales.at(i, k) = std::log(rng.uniform(0.004, 0.015));
        for (int k = 0; k < 3; ++k) s.sh_coeffs.at(i, k) = rng.uniform(-1.5, 1.5);
        s.opacity_logits.at(i, 0) = rng.uniform(-1.0, 3.0);
    }
    return s;
}

Camera benchmark_camera(int width, int height) {
    Camera c;
    c.fx = c.fy = width;
    c.cx = width / 2.0;
    c.cy = height / 2.0;
    c.width = width;
    c.height = height;
    return c;
}

} // namespace gtalk::eval
