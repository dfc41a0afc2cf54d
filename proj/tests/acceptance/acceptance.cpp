// Acceptance suite: one PASS/FAIL line per criterion. Tolerances and training
// recipes are fixed below; `--only 3,4` runs a subset.

#include "gtalk/data/synth.hpp"
#include "gtalk/diffmath/ops.hpp"
#include "gtalk/eval/bench.hpp"
#include "gtalk/eval/metrics.hpp"
#include "gtalk/eval/report.hpp"
#include "gtalk/model/canonical.hpp"
#include "gtalk/model/deform.hpp"
#include "gtalk/raster/rasterizer.hpp"
#include "gtalk/train/losses.hpp"
#include "gtalk/train/trainer.hpp"
#include "gtalk/triplane/triplane.hpp"
#include "gtalk/util/error.hpp"
#include "gtalk/util/log.hpp"
#include "gtalk/util/rng.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

using namespace gtalk;
using diff::Array;
using diff::Tape;
using diff::Var;
namespace fs = std::filesystem;

namespace {

// Tolerances.
constexpr double kMathTol = 1e-5;
constexpr double kRasterGradTol = 1e-3;
constexpr double kOracleTol = 1e-5;
constexpr int kGradInstances = 50;
constexpr int kOracleScenes = 50;
constexpr double kStaticPsnr = 30.0;
constexpr std::uint64_t kStaticIterationLimit = 4000;
constexpr double kDynamicPsnr = 28.0;
constexpr double kDynamicMargin = 3.0;
constexpr double kIdentityTol = 1e-6;
constexpr double kAttentionRatio = 2.0;
constexpr std::uint64_t kStageCheckpoints[] = {500, 1000};
constexpr std::uint64_t kStageSeeds[] = {0, 1, 2};
constexpr double kSpeedup = 10.0;
constexpr std::size_t kSpeedGaussians = 10000;
constexpr int kSpeedSize = 256;

// Desk-scale recipe: default loss weights and triplane rates, network rate 1e-3 -> 1e-4.
train::TrainConfig desk_config(std::uint64_t iterations, std::uint64_t seed) {
    train::TrainConfig c;
    c.iterations = iterations;
    c.seed = seed;
    c.lr_other = 1e-3;
    c.lr_other_final = 1e-4;
    c.densify_from = 500;
    c.densify_until = 1000;
    c.checkpoint_interval = 0;
    c.probe_interval = 0;
    return c;
}
constexpr std::uint64_t kStaticIterations = 2000;
constexpr std::uint64_t kCanonicalIterations = 1500;
constexpr std::uint64_t kDeformIterations = 4000;
constexpr std::size_t kStaticFrames = 110;  // 10 held-out views

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char b[64];
    std::snprintf(b, sizeof b, f, a);
    return b;
}

Array random_array(Rng& rng, diff::Shape s, double scale = 1.0) {
    Array a(std::move(s));
    for (double& v : a.values()) v = rng.normal() * scale;
    return a;
}

Image random_image(Rng& rng, int w, int h, double lo = 0.0, double hi = 1.0) {
    Image img(w, h);
    for (double& v : img.data) v = rng.uniform(lo, hi);
    return img;
}

double weighted_sum(const Image& img, const Image& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i) s += img.data[i] * w.data[i];
    return s;
}

GaussianSet random_scene(Rng& rng, std::size_t n, int degree, double lo, double hi, double spread = 0.6) {
    GaussianSet s = GaussianSet::zeros(n, degree);
    for (std::size_t i = 0; i < n; ++i) {
        s.positions.at(i, 0) = rng.uniform(-spread, spread);
        s.positions.at(i, 1) = rng.uniform(-spread, spread);
        s.positions.at(i, 2) = rng.uniform(1.5, 3.0);
        for (int c = 0; c < 4; ++c) s.rotations.at(i, c) = rng.normal();
        for (int c = 0; c < 3; ++c) s.log_scales.at(i, c) = std::log(rng.uniform(lo, hi));
        for (std::size_t j = 0; j < s.sh_coeffs.dim(1); ++j) s.sh_coeffs.at(i, j) = rng.uniform(-0.8, 0.8) / (1 + j / 3);
        s.opacity_logits.at(i, 0) = rng.uniform(-2.0, 3.0);
    }
    return s;
}

Camera test_camera(int size, Rng& rng) {
    return Camera::look_at({rng.uniform(-0.4, 0.4), rng.uniform(-0.3, 0.3), -0.4}, {0, 0, 2}, {0, -1, 0}, size * 1.25,
                           size * 1.25, size, size);
}

// ---------------------------------------------------------------- criterion 1

struct Worst {
    std::map<std::string, double> by_family;
    std::size_t skipped = 0;  // rasterizer entries at a discontinuity
    void add(const std::string& family, double e) { by_family[family] = std::max(by_family[family], e); }
};

void grad_diffmath(Rng& rng, Worst& w) {
    for (int trial = 0; trial < kGradInstances; ++trial) {
        const std::size_t m = 1 + rng.index(4), k = 1 + rng.index(4), n = 2 + rng.index(4);
        const Array kn = random_array(rng, {k, n}), mk = random_array(rng, {m, k}), mn = random_array(rng, {m, n});
        const Array x_mn = random_array(rng, {m, n}), x_mk = random_array(rng, {m, k}), x_row = random_array(rng, {1, n});
        Array x_nz = random_array(rng, {m, n});
        for (double& v : x_nz.values()) v = (v < 0 ? -1 : 1) * (0.1 + std::abs(v));
        auto run = [&](const diff::RecordedFn& f, const Array& x) { w.add("diffmath ops", diff::finite_difference_check(f, x, 1e-6)); };
        using namespace diff;
        run([&](Tape& t, Var v) { return matmul(v, t.constant(kn)); }, x_mk);
        run([&](Tape& t, Var v) { return matmul(t.constant(mk), v); }, kn);
        run([&](Tape& t, Var v) { return add(v, t.constant(mn)); }, x_mn);
        run([&](Tape& t, Var v) { return sub(t.constant(mn), v); }, x_mn);
        run([&](Tape& t, Var v) { return mul(v, t.constant(mn)); }, x_mn);
        run([&](Tape&, Var v) { return mul(v, v); }, x_mn);
        run([&](Tape& t, Var v) {
            const Var parts[] = {t.constant(mn), v};
            return concat(parts, 0);
        }, x_mn);
        run([&](Tape&, Var v) { return slice(v, 1, 1, n); }, x_mn);
        run([&](Tape&, Var v) { return softmax(v); }, x_mn);
        run([&](Tape&, Var v) { return relu(v); }, x_nz);
        run([&](Tape&, Var v) { return tanh(v); }, x_mn);
        run([&](Tape&, Var v) { return sigmoid(v); }, x_mn);
        run([&](Tape&, Var v) { return exp(v); }, x_mn);
        run([&](Tape&, Var v) { return scale(v, -1.7); }, x_mn);
        run([&](Tape&, Var v) { return reduce_sum(v); }, x_mn);
        run([&](Tape&, Var v) { return layer_norm(v); }, x_mn);
        run([&](Tape&, Var v) { return transpose(v); }, x_mn);
        run([&](Tape&, Var v) { return reshape(v, {m * n}); }, x_mn);
        run([&](Tape&, Var v) { return tile_rows(v, m); }, x_row);
        run([&](Tape&, Var v) { return normalize_rows(v); }, x_nz);
        run([&](Tape&, Var v) { return mean_abs(v); }, x_nz);
    }
}

void grad_triplane(Rng& rng, Worst& w) {
    for (int trial = 0; trial < kGradInstances; ++trial) {
        tri::TriplaneConfig cfg;
        cfg.resolutions = {3 + static_cast<int>(rng.index(4)), 4 + static_cast<int>(rng.index(4))};
        cfg.features = 3;
        cfg.init_range = 1.0;
        const auto g = tri::make_grid(cfg, 1000 + trial);
        Array pts({1 + rng.index(4), 3});
        for (double& v : pts.values()) v = rng.uniform(-0.95, 0.95);
        auto planes_with = [&](Tape& t, std::size_t replace, Var x) {
            std::vector<Var> planes;
            for (std::size_t j = 0; j < g.planes.size(); ++j) planes.push_back(j == replace ? x : t.leaf_ref(g.planes[j], false));
            return planes;
        };
        w.add("triplane query", diff::finite_difference_check(
                                    [&](Tape& t, Var x) { return tri::query(g, x, planes_with(t, SIZE_MAX, x)); }, pts, 1e-6));
        const std::size_t k = rng.index(g.planes.size());
        w.add("triplane query", diff::finite_difference_check(
                                    [&](Tape& t, Var x) { return tri::query(g, t.leaf_ref(pts, false), planes_with(t, k, x)); },
                                    g.planes[k], 1e-6));
    }
}

model::CanonicalConfig small_canonical() {
    model::CanonicalConfig c;
    c.triplane.resolutions = {6, 10};
    c.triplane.features = 4;
    c.triplane.init_range = 0.8;
    c.hidden = 12;
    return c;
}

Var attributes(const model::CanonicalOutputs& o) {
    const Var parts[] = {o.rotations, o.log_scales, o.sh_coeffs, o.opacity_logits};
    return diff::concat(parts, 1);
}

void grad_heads(Rng& rng, Worst& w) {
    for (int trial = 0; trial < kGradInstances; ++trial) {
        Array pts({3 + rng.index(4), 3});
        for (double& v : pts.values()) v = rng.uniform(-0.8, 0.8);
        auto m = model::make_canonical(small_canonical(), pts, 2000 + trial);
        for (std::size_t p = 0; p < m.params.size(); ++p)
            for (double& v : m.params[p].values()) v += rng.uniform(-0.1, 0.1);
        w.add("attribute heads", diff::finite_difference_check(
                                     [&](Tape& t, Var x) {
                                         auto b = model::bind(t, m, false);
                                         b.positions = x;
                                         return attributes(model::record_canonical(m, b));
                                     },
                                     m.positions, 1e-6));
        const std::size_t p = rng.index(m.params.size());
        w.add("attribute heads", diff::finite_difference_check(
                                     [&](Tape& t, Var x) {
                                         auto b = model::bind(t, m, false);
                                         b.params[p] = x;
                                         return attributes(model::record_canonical(m, b));
                                     },
                                     m.params[p], 1e-6));
    }
}

void grad_attention(Rng& rng, Worst& w) {
    model::DeformConfig cfg;
    cfg.feature_dim = 8;
    cfg.model_dim = 16;
    cfg.heads = 4;
    cfg.ffn_hidden = 24;
    cfg.audio_dim = 6;
    for (int trial = 0; trial < kGradInstances; ++trial) {
        auto m = model::make_deform(cfg, 3000 + trial);
        for (const model::Linear* l : {&m.psi_mu, &m.psi_r, &m.psi_s, &m.psi_sh, &m.psi_alpha})
            for (double& v : m.params[l->weight].values()) v = rng.normal() * 0.1;
        const Array features = random_array(rng, {8, 8}), tokens = random_array(rng, {4, 16});
        model::ConditionFrame frame;
        for (int i = 0; i < 6; ++i) frame.audio.push_back(rng.normal());
        frame.eye = rng.uniform();
        frame.camera = Camera::look_at({rng.uniform(-0.5, 0.5), 0.1, -2.0}, {0, 0, 0}, {0, -1, 0}, 30, 30, 24, 24);
        auto stack = [&](Tape& t, const std::vector<Var>& bound, Var f, Var tok) {
            auto att = model::attend(m, bound, model::embed_features(m, bound, f), tok);
            auto off = model::predict_offsets(m, bound, att.z);
            const Var parts[] = {off.mu, off.r, off.s, off.sh, off.alpha};
            return diff::concat(parts, 1);
        };
        w.add("attention stack", diff::finite_difference_check(
                                     [&](Tape& t, Var x) { return stack(t, m.params.bind(t, false), x, t.constant(tokens)); },
                                     features, 1e-6));
        w.add("attention stack", diff::finite_difference_check(
                                     [&](Tape& t, Var x) { return stack(t, m.params.bind(t, false), t.constant(features), x); },
                                     tokens, 1e-6));
        const std::size_t p = rng.index(m.params.size());
        w.add("attention stack", diff::finite_difference_check(
                                     [&](Tape& t, Var x) {
                                         auto bound = m.params.bind(t, false);
                                         bound[p] = x;
                                         return stack(t, bound, t.constant(features), model::encode_conditions(m, bound, frame, t));
                                     },
                                     m.params[p], 1e-6));
    }
}

void grad_raster(Rng& rng, Worst& w) {
    using Field = Array& (*)(GaussianSet&);
    const Field fields[] = {[](GaussianSet& s) -> Array& { return s.positions; },
                            [](GaussianSet& s) -> Array& { return s.rotations; },
                            [](GaussianSet& s) -> Array& { return s.log_scales; },
                            [](GaussianSet& s) -> Array& { return s.sh_coeffs; },
                            [](GaussianSet& s) -> Array& { return s.opacity_logits; }};
    for (int trial = 0; trial < kGradInstances; ++trial) {
        const int size = 24;
        auto set = random_scene(rng, 4, trial % 4, 0.05, 0.2);
        const Camera cam = test_camera(size, rng);
        const Image bg = random_image(rng, size, size), seed = random_image(rng, size, size, -1.0, 1.0);
        const auto p = raster::project(set, cam);
        const auto f = raster::render_tiled(p, bg, {.keep_records = true});
        const auto g = raster::render_backward(f, seed, p, set, cam);
        const Array* analytic[] = {&g.positions, &g.rotations, &g.log_scales, &g.sh_coeffs, &g.opacity_logits};
        for (int k = 0; k < 5; ++k) {
            GaussianSet probe = set;
            Array& values = fields[k](probe);
            for (std::size_t i = 0; i < values.size(); ++i) {
                auto central = [&](double eps) {
                    const double orig = values.data()[i];
                    values.data()[i] = orig + eps;
                    const double up = weighted_sum(raster::composite_reference(raster::project(probe, cam), bg).image, seed);
                    values.data()[i] = orig - eps;
                    const double down = weighted_sum(raster::composite_reference(raster::project(probe, cam), bg).image, seed);
                    values.data()[i] = orig;
                    return (up - down) / (2 * eps);
                };
                const double numeric = central(1e-6);
                // A pixel crossing the alpha floor or a footprint edge is a jump; the two
                // step sizes then disagree by O(1) instead of O(eps^2).
                if (std::abs(numeric - central(2.5e-7)) > 0.1 * std::max(1e-2, std::abs(numeric))) {
                    ++w.skipped;
                    continue;
                }
                w.add("rasterizer backward", std::abs(analytic[k]->data()[i] - numeric) / std::max(1e-2, std::abs(numeric)));
            }
        }
    }
}

void grad_losses(Rng& rng, Worst& w) {
    const train::LossWeights lw;
    for (int trial = 0; trial < kGradInstances; ++trial) {
        const int wd = 11 + static_cast<int>(rng.index(8)), ht = 11 + static_cast<int>(rng.index(8));
        Image x = random_image(rng, wd, ht), gt = random_image(rng, wd, ht);
        const data::LipBox box{2, 3, wd - 2, ht - 4};
        Image gs;
        train::ssim(x, gt, &gs);
        const auto lc = train::loss_canonical(x, gt, lw);
        const auto ld = train::loss_deform(x, gt, box, lw);
        for (int k = 0; k < 8; ++k) {
            const std::size_t i = rng.index(x.data.size());
            if (std::abs(x.data[i] - gt.data[i]) < 1e-3) continue;  // L1 kink
            auto central = [&](auto&& f) {
                const double orig = x.data[i], eps = 1e-5;
                x.data[i] = orig + eps;
                const double up = f();
                x.data[i] = orig - eps;
                const double down = f();
                x.data[i] = orig;
                return (up - down) / (2 * eps);
            };
            const double ns = central([&] { return train::ssim(x, gt); });
            const double nc = central([&] { return train::loss_canonical(x, gt, lw).total; });
            const double nd = central([&] { return train::loss_deform(x, gt, box, lw).total; });
            w.add("losses", std::abs(gs.data[i] - ns) / std::max(1e-4, std::abs(ns)));
            w.add("losses", std::abs(lc.grad.data[i] - nc) / std::max(1e-4, std::abs(nc)));
            w.add("losses", std::abs(ld.grad.data[i] - nd) / std::max(1e-4, std::abs(nd)));
        }
    }
}

Outcome criterion1() {
    Rng rng(20240501);
    Worst w;
    const auto level = log::level();
    log::set_level(log::Level::error);  // clamped triplane queries log at warn
    grad_diffmath(rng, w);
    grad_triplane(rng, w);
    grad_heads(rng, w);
    grad_attention(rng, w);
    grad_raster(rng, w);
    grad_losses(rng, w);
    log::set_level(level);
    Outcome o{true, ""};
    for (const auto& [family, err] : w.by_family) {
        const double tol = family == "rasterizer backward" ? kRasterGradTol : kMathTol;
        o.pass = o.pass && err <= tol;
        o.detail += (o.detail.empty() ? "" : ", ") + family + " " + fmt("%.1e", err);
    }
    o.detail += " (" + std::to_string(w.skipped) + " raster entries at a discontinuity skipped)";
    return o;
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion2() {
    Rng rng(77);
    double worst = 0.0;
    std::size_t multi_tile = 0, empty_tiles = 0;
    for (int s = 0; s < kOracleScenes; ++s) {
        const int size = 64;
        const std::size_t n = 1 + rng.index(200);
        // Every fifth scene is sparse and small so some tiles stay empty.
        const bool sparse = s % 5 == 0;
        auto set = random_scene(rng, sparse ? 1 + n % 6 : n, s % 4, sparse ? 0.01 : 0.02, sparse ? 0.05 : 0.25,
                                sparse ? 0.3 : 0.6);
        const Camera cam = test_camera(size, rng);
        const Image bg = random_image(rng, size, size);
        const auto p = raster::project(set, cam);
        const auto a = raster::render_tiled(p, bg).image, b = raster::composite_reference(p, bg).image;
        for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
        const int tiles = size / raster::kTileSize;
        std::vector<bool> touched(tiles * tiles, false);
        for (const auto& g : p.gaussians) {
            if (g.min_x > g.max_x || g.min_y > g.max_y) continue;
            const int tx0 = std::max(0, g.min_x / raster::kTileSize), tx1 = std::min(tiles - 1, g.max_x / raster::kTileSize);
            const int ty0 = std::max(0, g.min_y / raster::kTileSize), ty1 = std::min(tiles - 1, g.max_y / raster::kTileSize);
            if (tx1 > tx0 || ty1 > ty0) ++multi_tile;
            for (int ty = ty0; ty <= ty1; ++ty)
                for (int tx = tx0; tx <= tx1; ++tx) touched[ty * tiles + tx] = true;
        }
        empty_tiles += std::count(touched.begin(), touched.end(), false);
    }
    Outcome o;
    o.pass = worst <= kOracleTol && multi_tile > 0 && empty_tiles > 0;
    o.detail = "worst |tiled - reference| " + fmt("%.2e", worst) + " over " + std::to_string(kOracleScenes) + " scenes, " +
               std::to_string(multi_tile) + " multi-tile Gaussians, " + std::to_string(empty_tiles) + " empty tiles";
    return o;
}

// ---------------------------------------------------------------- training helpers

struct Context {
    fs::path work;
    std::optional<data::Dataset> dynamic;
    std::optional<train::Checkpoint> canonical0, deform0;
    double canonical0_test_psnr = 0;
    std::optional<eval::ReportSummary> deform0_summary;
};

const data::Dataset& dynamic_dataset(Context& ctx) {
    if (!ctx.dynamic) {
        const fs::path dir = ctx.work / "dynamic";
        fs::remove_all(dir);
        data::generate(data::default_scenario(), dir);
        ctx.dynamic = data::load_dataset(dir / data::kManifestName);
    }
    return *ctx.dynamic;
}

train::Checkpoint run_trainer(train::Trainer& t) {
    while (!t.done()) t.step();
    return t.state();
}

eval::ReportOptions score_only() {
    eval::ReportOptions o;
    o.write_renders = false;
    o.write_triplane = false;
    return o;
}

const train::Checkpoint& canonical_seed0(Context& ctx) {
    if (!ctx.canonical0) {
        auto t = train::Trainer::canonical(dynamic_dataset(ctx), desk_config(kCanonicalIterations, 0));
        ctx.canonical0 = run_trainer(t);
        ctx.canonical0_test_psnr = eval::evaluate(*ctx.canonical0, dynamic_dataset(ctx), score_only()).test_psnr;
    }
    return *ctx.canonical0;
}

// ---------------------------------------------------------------- criterion 3

Outcome criterion3(Context& ctx) {
    static_assert(kStaticIterations <= kStaticIterationLimit);
    auto s = data::static_scenario();
    s.frames = kStaticFrames;
    const fs::path dir = ctx.work / "static";
    fs::remove_all(dir);
    data::generate(s, dir);
    const auto ds = data::load_dataset(dir / data::kManifestName);
    auto t = train::Trainer::canonical(ds, desk_config(kStaticIterations, 0));
    const auto ck = run_trainer(t);
    const auto r = eval::evaluate(ck, ds, score_only());
    Outcome o;
    o.pass = r.frames.size() == 10 && r.test_psnr >= kStaticPsnr;
    o.detail = "test PSNR " + fmt("%.2f", r.test_psnr) + " dB on " + std::to_string(r.frames.size()) + " held-out views after " +
               std::to_string(kStaticIterations) + " iterations, " + std::to_string(ck.canonical.size()) + " Gaussians";
    return o;
}

// ---------------------------------------------------------------- criteria 4 and 6

const eval::ReportSummary& deform_seed0(Context& ctx) {
    if (!ctx.deform0_summary) {
        const auto& can = canonical_seed0(ctx);
        auto t = train::Trainer::deform(dynamic_dataset(ctx), desk_config(kDeformIterations, 0), &can);
        ctx.deform0 = run_trainer(t);
        ctx.deform0_summary = eval::render_report(*ctx.deform0, dynamic_dataset(ctx), ctx.work / "report");
    }
    return *ctx.deform0_summary;
}

Outcome criterion4(Context& ctx) {
    const auto& s = deform_seed0(ctx);
    const double gain = s.test_psnr - ctx.canonical0_test_psnr;
    Outcome o;
    o.pass = s.test_psnr >= kDynamicPsnr && gain >= kDynamicMargin;
    o.detail = "test PSNR " + fmt("%.2f", s.test_psnr) + " dB vs frozen canonical " + fmt("%.2f", ctx.canonical0_test_psnr) +
               " dB (" + fmt("%+.2f", gain) + " dB)";
    return o;
}

Outcome criterion6(Context& ctx) {
    const auto& s = deform_seed0(ctx);
    const auto& au = s.attention_of(model::kAudioToken);
    const auto& ey = s.attention_of(model::kEyeToken);
    Outcome o;
    o.pass = au.mouth_ratio() >= kAttentionRatio && ey.eye_ratio() >= kAttentionRatio;
    o.detail = "audio token mouth/non-mouth " + fmt("%.2f", au.mouth_ratio()) + " (" + fmt("%.4f", au.mouth) + " vs " +
               fmt("%.4f", au.non_mouth) + "), eye token eyes/non-eyes " + fmt("%.2f", ey.eye_ratio()) + " (" +
               fmt("%.4f", ey.eye) + " vs " + fmt("%.4f", ey.non_eye) + ")";
    return o;
}

// ---------------------------------------------------------------- criterion 5

Outcome criterion5(Context& ctx) {
    const auto& ds = dynamic_dataset(ctx);
    const auto& can = canonical_seed0(ctx);
    const auto t = train::Trainer::deform(ds, desk_config(kDeformIterations, 0), &can);
    const GaussianSet canonical_set = model::assemble_canonical(can.canonical);
    double worst = 0.0;
    std::size_t frames = 0;
    for (std::size_t pos = 0; pos < ds.frames.size(); pos += 5) {
        const auto& f = ds.frames[pos];
        const Image a = t.render_frame(pos);
        const Image b = raster::render(canonical_set, f.condition.camera, from_8bit(f.background));
        for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
        ++frames;
    }
    Outcome o;
    o.pass = worst <= kIdentityTol;
    o.detail = "max per-channel difference " + fmt("%.2e", worst) + " over " + std::to_string(frames) + " frames";
    return o;
}

// ---------------------------------------------------------------- criterion 7

Outcome criterion7(Context& ctx) {
    const auto& ds = dynamic_dataset(ctx);
    const std::uint64_t budget = kStageCheckpoints[std::size(kStageCheckpoints) - 1];
    Outcome o{true, ""};
    std::size_t wins = 0;
    for (std::uint64_t seed : kStageSeeds) {
        train::Checkpoint can;
        if (seed == 0) {
            can = canonical_seed0(ctx);
        } else {
            auto t = train::Trainer::canonical(ds, desk_config(kCanonicalIterations, seed));
            can = run_trainer(t);
        }
        auto staged = train::Trainer::deform(ds, desk_config(budget, seed), &can);
        auto scratch = train::Trainer::deform(ds, desk_config(budget, seed), nullptr);
        bool all = true;
        std::string line;
        for (std::uint64_t at : kStageCheckpoints) {
            while (staged.state().iteration < at) staged.step();
            while (scratch.state().iteration < at) scratch.step();
            const double a = staged.probe_psnr(), b = scratch.probe_psnr();
            all = all && a > b;
            line += " @" + std::to_string(at) + " " + fmt("%.2f", a) + " vs " + fmt("%.2f", b);
        }
        wins += all;
        o.detail += (o.detail.empty() ? "" : "; ") + ("seed " + std::to_string(seed) + ":" + line);
    }
    o.pass = wins == std::size(kStageSeeds);
    o.detail = std::to_string(wins) + "/" + std::to_string(std::size(kStageSeeds)) + " seeds (stage-wise vs from scratch, dB) " +
               o.detail;
    return o;
}

// ---------------------------------------------------------------- criterion 8

Outcome criterion8(Context& ctx) {
    const auto set = eval::benchmark_scene(kSpeedGaussians, 1);
    const auto sp = eval::compare_renderers(set, eval::benchmark_camera(kSpeedSize, kSpeedSize), Image(kSpeedSize, kSpeedSize, 0.0), 3);
    Outcome o;
    o.pass = sp.ratio() >= kSpeedup;
    o.detail = std::to_string(kSpeedGaussians) + " Gaussians at " + std::to_string(kSpeedSize) + "^2: tiled " +
               fmt("%.2f", sp.tiled_ms) + " ms (" + fmt("%.1f", 1000.0 / sp.tiled_ms) + " fps), reference " +
               fmt("%.1f", sp.reference_ms) + " ms, speedup " + fmt("%.1f", sp.ratio()) + "x";
    if (ctx.deform0) {
        const auto r = eval::fps_benchmark(*ctx.deform0, dynamic_dataset(ctx), 50);
        o.detail += "; trained model end to end " + fmt("%.1f", r.mean_fps) + " fps (" + std::to_string(r.gaussians) + " Gaussians)";
    }
    return o;
}

// ---------------------------------------------------------------- criterion 9

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_tree(const fs::path& a, const fs::path& b) {
    std::size_t n = 0, m = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        if (slurp(e.path()) != slurp(b / fs::relative(e.path(), a))) return false;
        ++n;
    }
    for (const auto& e : fs::recursive_directory_iterator(b)) m += e.is_regular_file();
    return n == m && n > 0;
}

Outcome criterion9(Context& ctx) {
    data::SynthScenario s;
    s.frames = 33;
    s.width = s.height = 64;
    s.focal = 75;
    s.head_gaussians = 120;
    s.lip_gaussians = 6;
    s.eye_gaussians = 5;
    const fs::path a = ctx.work / "det_a", b = ctx.work / "det_b";
    fs::remove_all(a);
    fs::remove_all(b);
    data::generate(s, a);
    data::generate(s, b);
    const bool datasets = same_tree(a, b);

    const auto ds = data::load_dataset(a / data::kManifestName);
    auto cfg = desk_config(60, 5);
    cfg.densify_from = 20;
    cfg.densify_until = 40;
    cfg.densify_interval = 20;
    cfg.canonical.triplane.resolutions = {16, 32};
    cfg.canonical.triplane.features = 16;
    auto trajectory = [&](train::Checkpoint* out_can, train::Checkpoint* out_def) {
        std::vector<double> losses;
        auto c = train::Trainer::canonical(ds, cfg);
        while (!c.done()) losses.push_back(c.step().total);
        auto d = train::Trainer::deform(ds, cfg, &c.state());
        while (!d.done()) losses.push_back(d.step().total);
        if (out_can) *out_can = c.state();
        if (out_def) *out_def = d.state();
        return losses;
    };
    train::Checkpoint can, def;
    const auto l1 = trajectory(&can, &def), l2 = trajectory(nullptr, nullptr);
    const bool losses = l1 == l2;

    eval::ReportOptions ro;
    ro.split = data::Split::all;
    eval::render_report(def, ds, ctx.work / "det_report_a", ro);
    eval::render_report(def, ds, ctx.work / "det_report_b", ro);
    const bool reports = same_tree(ctx.work / "det_report_a", ctx.work / "det_report_b");

    Outcome o;
    o.pass = datasets && losses && reports;
    o.detail = std::string("datasets ") + (datasets ? "identical" : "DIFFER") + ", " + std::to_string(l1.size()) +
               "-step loss trajectories " + (losses ? "identical" : "DIFFER") + ", reports " + (reports ? "identical" : "DIFFER");
    return o;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance suite"};
    std::string work = (fs::temp_directory_path() / "gtalk_acceptance").string();
    std::vector<int> only;
    app.add_option("--work", work, "scratch directory for datasets and reports");
    app.add_option("--only", only, "criteria to run")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    log::set_level(log::Level::warn);
    Context ctx;
    ctx.work = work;
    fs::create_directories(ctx.work);

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"gradient suite", [] { return criterion1(); }},
        {"rasterizer oracle", [] { return criterion2(); }},
        {"canonical reconstruction", [&] { return criterion3(ctx); }},
        {"deformation efficacy", [&] { return criterion4(ctx); }},
        {"zero-offset identity", [&] { return criterion5(ctx); }},
        {"attention localization", [&] { return criterion6(ctx); }},
        {"stage-wise trend", [&] { return criterion7(ctx); }},
        {"performance contract", [&] { return criterion8(ctx); }},
        {"determinism", [&] { return criterion9(ctx); }},
    };
    const std::set<int> selected(only.begin(), only.end());
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        const int id = static_cast<int>(k) + 1;
        if (!selected.empty() && !selected.count(id)) continue;
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
        std::printf("criterion %d %-26s %s  %s [%.1f s]\n", id, criteria[k].first, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
        std::fflush(stdout);
        failed += !o.pass;
    }
    return failed ? 1 : 0;
}
