#include "gtalk/data/synth.hpp"
#include "gtalk/eval/metrics.hpp"
#include "gtalk/raster/rasterizer.hpp"
#include "gtalk/train/losses.hpp"
#include "gtalk/train/optim.hpp"
#include "gtalk/train/trainer.hpp"
#include "gtalk/util/error.hpp"
#include "gtalk/util/log.hpp"
#include "gtalk/util/rng.hpp"

#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace gtalk;
using namespace gtalk::train;
namespace fs = std::filesystem;

namespace {

Image pattern(int h, int w, int k) {
    Image img(w, h);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch)
                img.at(r, c, ch) = k == 0 ? 0.5 + 0.4 * std::sin(0.7 * r + 1.3 * c + 2.1 * ch)
                                          : 0.5 + 0.45 * std::cos(0.11 * r * c + 0.9 * r - 0.5 * c + ch);
    return img;
}

Image random_image(Rng& rng, int w, int h, double lo = 0.0, double hi = 1.0) {
    Image img(w, h);
    for (double& v : img.data) v = rng.uniform(lo, hi);
    return img;
}

// Central difference of f at a[i].
template <typename F>
double numeric(F&& f, Image& a, std::size_t i, double eps) {
    const double orig = a.data[i];
    a.data[i] = orig + eps;
    const double up = f(a);
    a.data[i] = orig - eps;
    const double down = f(a);
    a.data[i] = orig;
    return (up - down) / (2 * eps);
}

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "gtalk_test_train" / name;
    fs::remove_all(p);
    return p;
}

TrainConfig tiny_config(std::uint64_t iterations) {
    TrainConfig c;
    c.iterations = iterations;
    c.canonical.triplane.resolutions = {8, 16};
    c.canonical.triplane.features = 8;
    c.canonical.hidden = 16;
    c.deform.model_dim = 16;
    c.deform.heads = 2;
    c.deform.ffn_hidden = 32;
    c.densify_from = 20;
    c.densify_until = 60;
    c.densify_interval = 20;
    c.probe_interval = 0;
    c.checkpoint_interval = 25;
    return c;
}

const data::Dataset& tiny_dataset() {
    static const data::Dataset ds = [] {
        data::SynthScenario s;
        s.frames = 22;
        s.width = s.height = 48;
        s.focal = 56.0;
        s.head_gaussians = 80;
        s.lip_gaussians = 5;
        s.eye_gaussians = 4;
        const auto dir = temp_dir("dataset");
        data::generate(s, dir);
        return data::load_dataset(dir / data::kManifestName);
    }();
    return ds;
}

} // namespace

TEST_CASE("ssim matches the direct windowed formula") {
    const Image a = pattern(16, 13, 0), b = pattern(16, 13, 1);
    CHECK(ssim(a, b) == doctest::Approx(-0.020596949837423367).epsilon(1e-10));
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    Image blend(13, 16);
    for (std::size_t i = 0; i < blend.data.size(); ++i) blend.data[i] = 0.7 * a.data[i] + 0.3 * b.data[i];
    CHECK(ssim(a, blend) == doctest::Approx(0.8683908494302549).epsilon(1e-10));
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-12);
}

TEST_CASE("ssim edge cases") {
    Rng rng(3);
    Image bin(20, 20), inv(20, 20);
    for (std::size_t i = 0; i < bin.data.size(); ++i) {
        bin.data[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
        inv.data[i] = 1.0 - bin.data[i];
    }
    CHECK(ssim(bin, inv) < -0.9);
    CHECK(1.0 - ssim(bin, bin) == doctest::Approx(0.0));
    CHECK_THROWS_AS(ssim(Image(10, 20), Image(10, 20)), ShapeError);
    CHECK_THROWS_AS(ssim(Image(20, 20), Image(21, 20)), ShapeError);
}

TEST_CASE("ssim gradient matches finite differences") {
    Rng rng(11);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int w = 11 + static_cast<int>(rng.index(6)), h = 11 + static_cast<int>(rng.index(6));
        Image a = random_image(rng, w, h), b = random_image(rng, w, h);
        Image grad;
        ssim(a, b, &grad);
        for (int k = 0; k < 6; ++k) {
            const std::size_t i = rng.index(a.data.size());
            const double n = numeric([&](const Image& x) { return ssim(x, b); }, a, i, 1e-6);
            worst = std::max(worst, std::abs(grad.data[i] - n) / std::max(1e-4, std::abs(n)));
        }
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("l1 and the canonical loss") {
    Rng rng(5);
    const LossWeights w;
    const Image r = random_image(rng, 24, 20, 0.0, 0.9);
    Image gt = r;
    for (double& v : gt.data) v += 0.1;

    const auto same = loss_canonical(r, r, w);
    CHECK(same.total == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(same.l1 == 0.0);

    const auto shifted = loss_canonical(r, gt, w);
    CHECK(shifted.l1 * w.l1 == doctest::Approx(0.1 * w.l1).epsilon(1e-12));
    CHECK(shifted.total == doctest::Approx(w.l1 * shifted.l1 + w.dssim * shifted.dssim));

    // Gradient of the whole loss.
    const Image target = random_image(rng, 16, 14);
    Image x = random_image(rng, 16, 14);
    const auto lv = loss_canonical(x, target, w);
    double worst = 0.0;
    for (int k = 0; k < 60; ++k) {
        const std::size_t i = rng.index(x.data.size());
        if (std::abs(x.data[i] - target.data[i]) < 1e-3) continue;
        const double n = numeric([&](const Image& y) { return loss_canonical(y, target, w).total; }, x, i, 1e-7);
        worst = std::max(worst, std::abs(lv.grad.data[i] - n) / std::max(1e-4, std::abs(n)));
    }
    CHECK(worst <= 1e-5);

    LossWeights bad = w;
    bad.perceptual = 0.01;
    CHECK_THROWS_AS(loss_canonical(x, target, bad), DataError);
    bad.perceptual_term = [](const Image& a, const Image& b, Image* g) {
        double s = 0;
        for (std::size_t i = 0; i < a.data.size(); ++i) {
            s += a.data[i] - b.data[i];
            g->data[i] += 1.0;
        }
        return s;
    };
    const auto with = loss_canonical(x, target, bad);
    CHECK(with.total == doctest::Approx(lv.total + 0.01 * with.perceptual));
    CHECK(with.grad.data[0] == doctest::Approx(lv.grad.data[0] + 0.01));
    bad.l1 = -1;
    CHECK_THROWS_AS(loss_canonical(x, target, bad), DataError);
}

TEST_CASE("lip crop locality") {
    Rng rng(8);
    const LossWeights w;
    const Image r = random_image(rng, 32, 32);
    const data::LipBox box{10, 12, 20, 18};
    CHECK(loss_deform(r, r, box, w).total == doctest::Approx(0.0).epsilon(1e-12));

    Image outside = r;
    outside.at(2, 3, 1) += 0.3;
    outside.at(30, 25, 0) -= 0.2;
    const auto lo = loss_deform(r, outside, box, w);
    CHECK(lo.total == loss_canonical(r, outside, w).total);
    CHECK(lo.lip == 0.0);

    Image inside = r;
    inside.at(14, 15, 2) += 0.3;
    const auto li = loss_deform(r, inside, box, w);
    CHECK(li.total > loss_canonical(r, inside, w).total);
    CHECK(li.lip == doctest::Approx(0.3 / (10 * 6 * 3)));

    CHECK_THROWS_AS(loss_deform(r, r, data::LipBox{5, 5, 5, 9}, w), DataError);
    CHECK_THROWS_AS(loss_deform(r, r, data::LipBox{20, 0, 40, 9}, w), DataError);

    // Lip gradient.
    Image x = random_image(rng, 32, 32);
    const auto lv = loss_deform(x, r, box, w);
    double worst = 0.0;
    for (int k = 0; k < 40; ++k) {
        const int row = 12 + static_cast<int>(rng.index(6)), col = 10 + static_cast<int>(rng.index(10));
        const std::size_t i = (static_cast<std::size_t>(row) * 32 + col) * 3 + rng.index(3);
        if (std::abs(x.data[i] - r.data[i]) < 1e-3) continue;
        const double n = numeric([&](const Image& y) { return loss_deform(y, r, box, w).total; }, x, i, 1e-7);
        worst = std::max(worst, std::abs(lv.grad.data[i] - n) / std::max(1e-4, std::abs(n)));
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("psnr") {
    Rng rng(2);
    const Image a = random_image(rng, 9, 7, 0.0, 0.9);
    CHECK(eval::psnr(a, a) == eval::kPsnrCap);
    Image b = a;
    for (double& v : b.data) v += 0.1;
    CHECK(eval::psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));
    const Image c = random_image(rng, 9, 7);
    double m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m += (a.data[i] - c.data[i]) * (a.data[i] - c.data[i]);
    m /= static_cast<double>(a.data.size());
    CHECK(eval::psnr(a, c) == doctest::Approx(10 * std::log10(1 / m)).epsilon(1e-12));
    CHECK(std::abs(eval::psnr(a, c) - eval::psnr(c, a)) <= 1e-12);
    CHECK_THROWS_AS(eval::psnr(a, Image(7, 9)), ShapeError);
}

TEST_CASE("adam") {
    Adam opt;
    Array p({1, 2}, {1.0, -2.0});
    const Array g({1, 2}, {0.5, -3.0});
    opt.begin_step();
    opt.update(0, p, g, 0.1);
    // First step moves every coordinate by lr against the gradient sign.
    CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(-1.9).epsilon(1e-12));
    // Tiny gradients still take full-size steps.
    Adam tiny;
    Array q({1}, {0.0});
    tiny.begin_step();
    tiny.update(0, q, Array({1}, {1e-12}), 0.01);
    CHECK(q[0] == doctest::Approx(-0.01).epsilon(1e-3));
    CHECK_THROWS_AS(opt.update(0, p, Array({2}), 0.1), ShapeError);

    Adam r;
    Array rows({2, 3}, {1, 2, 3, 4, 5, 6});
    r.begin_step();
    r.update(0, rows, Array({2, 3}, {1, 1, 1, 2, 2, 2}), 0.1);
    const auto before = r.moments()[0];
    r.remap_rows(0, {1, -1, 0}, 3);
    CHECK(r.moments()[0].m.dim(0) == 3);
    CHECK(r.moments()[0].m.at(0, 1) == before.m.at(1, 1));
    CHECK(r.moments()[0].m.at(1, 2) == 0.0);
    CHECK(r.moments()[0].v.at(2, 0) == before.v.at(0, 0));

    CHECK(exponential_lr(1.6e-3, 1.6e-4, 0.0) == doctest::Approx(1.6e-3));
    CHECK(exponential_lr(1.6e-3, 1.6e-4, 1.0) == doctest::Approx(1.6e-4));
    CHECK(exponential_lr(1.6e-3, 1.6e-4, 0.5) == doctest::Approx(std::sqrt(1.6e-3 * 1.6e-4)));
    CHECK(exponential_lr(1e-4, 1e-5, 7.0) == doctest::Approx(1e-5));
}

TEST_CASE("train config round trip") {
    TrainConfig c;
    c.iterations = 1234;
    c.lr_other = 3e-4;
    c.seed = 99;
    c.canonical.triplane.resolutions = {16, 32, 48};
    c.canonical.triplane.lower = {-1.5, -1, -0.5};
    const auto back = config_from_key_values(c.to_key_values());
    CHECK(back.to_key_values().to_string() == c.to_key_values().to_string());
    CHECK(back.canonical.triplane.resolutions == c.canonical.triplane.resolutions);
    CHECK(back.canonical.triplane.lower == c.canonical.triplane.lower);

    TrainConfig defaults;
    CHECK(defaults.weights.l1 == 0.8);
    CHECK(defaults.weights.dssim == 0.2);
    CHECK(defaults.weights.perceptual == 0.0);
    CHECK(defaults.weights.lip == 0.8);
    CHECK(defaults.iterations == 8000);
    CHECK(defaults.lr_triplane == 1.6e-3);
    CHECK(defaults.lr_triplane_final == 1.6e-4);
    CHECK(defaults.lr_other == 1e-4);
    CHECK(defaults.lr_other_final == 1e-5);
    CHECK(defaults.canonical.cap == 50000);

    CHECK_THROWS_WITH_AS(config_from_key_values(KeyValues::parse("iterations = 5\nlr = 2\n")), doctest::Contains("lr"),
                         DataError);
    CHECK_THROWS_AS(config_from_key_values(KeyValues::parse("iterations = 0\n")), DataError);
    CHECK_THROWS_AS(config_from_key_values(KeyValues::parse("lip = -0.5\n")), DataError);
}

TEST_CASE("same seed gives identical loss trajectories") {
    log::set_level(log::Level::warn);
    const auto& ds = tiny_dataset();
    auto cfg = tiny_config(30);
    auto a = Trainer::canonical(ds, cfg), b = Trainer::canonical(ds, cfg);
    for (int i = 0; i < 30; ++i) {
        const auto la = a.step(), lb = b.step();
        REQUIRE(la.total == lb.total);
        REQUIRE(la.gaussians == lb.gaussians);
    }
    CHECK(a.state().canonical.positions == b.state().canonical.positions);

    cfg.seed = 1;
    auto c = Trainer::canonical(ds, cfg);
    auto d = Trainer::canonical(ds, tiny_config(30));
    CHECK(c.step().total != d.step().total);
}

TEST_CASE("frame order is a seeded shuffle of the training split") {
    const auto& ds = tiny_dataset();
    auto t = Trainer::canonical(ds, tiny_config(10));
    std::vector<int> seen(ds.frames.size(), 0);
    for (std::uint64_t i = 0; i < 20; ++i) ++seen[t.frame_for_iteration(i)];
    for (std::size_t i = 0; i < ds.frames.size(); ++i) CHECK(seen[i] == (data::is_test_index(ds.frames[i].index) ? 0 : 1));
    CHECK(ds.frames[t.probe_index()].index == 10);
}

TEST_CASE("checkpoint resume continues bit for bit") {
    const auto& ds = tiny_dataset();
    const auto dir = temp_dir("resume");
    fs::create_directories(dir);
    // The densify window straddles the checkpoint.
    auto cfg = tiny_config(50);
    cfg.densify_config.grad_threshold = 1e-6;
    log::set_level(log::Level::error);

    auto full = Trainer::canonical(ds, cfg);
    std::vector<double> losses;
    for (int i = 0; i < 50; ++i) losses.push_back(full.step().total);

    auto first = Trainer::canonical(ds, cfg);
    for (int i = 0; i < 30; ++i) REQUIRE(first.step().total == losses[i]);
    save_checkpoint(first.state(), dir / "mid.ckpt");
    const auto loaded = load_checkpoint(dir / "mid.ckpt");
    CHECK(loaded.iteration == 30);
    CHECK(loaded.canonical.positions == first.state().canonical.positions);
    CHECK(loaded.canonical.grid.planes == first.state().canonical.grid.planes);
    CHECK(loaded.canonical.params == first.state().canonical.params);
    CHECK(loaded.optimizer == first.state().optimizer);
    CHECK(loaded.grad_accum == first.state().grad_accum);

    auto resumed = Trainer::resume(ds, loaded);
    for (int i = 30; i < 50; ++i) CHECK(resumed.step().total == losses[i]);
    CHECK(resumed.state().canonical.size() == full.state().canonical.size());

    // Deformation stage too.
    auto dcfg = tiny_config(12);
    auto dfull = Trainer::deform(ds, dcfg, &full.state());
    std::vector<double> dl;
    for (int i = 0; i < 12; ++i) dl.push_back(dfull.step().total);
    auto dfirst = Trainer::deform(ds, dcfg, &full.state());
    for (int i = 0; i < 5; ++i) dfirst.step();
    save_checkpoint(dfirst.state(), dir / "deform.ckpt");
    auto dres = Trainer::resume(ds, load_checkpoint(dir / "deform.ckpt"));
    for (int i = 5; i < 12; ++i) CHECK(dres.step().total == dl[i]);
}

TEST_CASE("broken checkpoints are rejected") {
    const auto dir = temp_dir("broken");
    fs::create_directories(dir);
    std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), Error);

    const auto& ds = tiny_dataset();
    auto t = Trainer::canonical(ds, tiny_config(3));
    save_checkpoint(t.state(), dir / "ok.ckpt");
    std::ifstream in(dir / "ok.ckpt", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream(dir / "cut.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(dir / "cut.ckpt"), FormatError);
}

TEST_CASE("runaway training aborts with the last good checkpoint") {
    const auto& ds = tiny_dataset();
    const auto dir = temp_dir("abort");
    auto cfg = tiny_config(40);
    cfg.lr_other = cfg.lr_other_final = 1e300;
    cfg.lr_triplane = cfg.lr_triplane_final = 1e300;
    cfg.checkpoint_interval = 1;
    log::set_level(log::Level::off);
    auto t = Trainer::canonical(ds, cfg);
    CHECK_THROWS_WITH_AS(run(t, {.out_dir = dir, .quiet = true}), doctest::Contains("last good checkpoint"), NumericError);
    log::set_level(log::Level::warn);
    REQUIRE(fs::exists(dir / "canonical.ckpt"));
    const auto good = load_checkpoint(dir / "canonical.ckpt");
    CHECK(good.iteration == t.state().iteration);
    CHECK(good.canonical.positions.all_finite());
}

TEST_CASE("run writes the log and checkpoints") {
    const auto& ds = tiny_dataset();
    const auto dir = temp_dir("run");
    auto cfg = tiny_config(30);
    cfg.probe_interval = 10;
    std::size_t calls = 0;
    const auto c = train_canonical(ds, cfg, {.out_dir = dir, .on_step = [&](const StepLog&) { ++calls; }, .quiet = true});
    CHECK(calls == 30);
    CHECK(c.iteration == 30);
    std::ifstream csv(dir / "canonical_log.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "iteration,total,l1,dssim,lip,perceptual,probe_psnr,gaussians,wall_seconds");
    int rows = 0, probes = 0;
    while (std::getline(csv, line)) {
        ++rows;
        if (line.find(",,") == std::string::npos) ++probes;
    }
    CHECK(rows == 30);
    CHECK(probes == 3);
    CHECK(load_checkpoint(dir / "canonical.ckpt").iteration == 30);
}

TEST_CASE("deformation stage starts at the canonical render") {
    const auto& ds = tiny_dataset();
    auto can = Trainer::canonical(ds, tiny_config(15));
    while (!can.done()) can.step();
    auto def = Trainer::deform(ds, tiny_config(5), &can.state());
    for (std::size_t f : {0u, 7u, 10u}) {
        const Image a = can.render_frame(f), b = def.render_frame(f);
        double worst = 0;
        for (std::size_t i = 0; i < a.data.size(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
        CHECK(worst <= 1e-12);
    }
    CHECK_THROWS_AS(Trainer::deform(ds, tiny_config(5), &def.state()), DataError);
}

TEST_CASE("every trainable leaf moves within 100 deformation steps") {
    const auto& ds = tiny_dataset();
    auto can = Trainer::canonical(ds, tiny_config(20));
    while (!can.done()) can.step();
    auto def = Trainer::deform(ds, tiny_config(100), &can.state());
    std::vector<double> watch;
    def.gradient_watch = &watch;
    for (int i = 0; i < 100; ++i) def.step();
    const auto names = def.slot_names();
    REQUIRE(watch.size() == names.size());
    for (std::size_t s = 0; s < watch.size(); ++s) CHECK_MESSAGE(watch[s] > 0.0, names[s]);
}

TEST_CASE("loss goes down") {
    const auto& ds = tiny_dataset();
    auto cfg = tiny_config(300);
    cfg.densify = false;
    auto t = Trainer::canonical(ds, cfg);
    double early = 0, late = 0;
    for (int i = 0; i < 300; ++i) {
        const double l = t.step().total;
        if (i < 100) early += l;
        if (i >= 200) late += l;
    }
    CHECK(late < early);
}
