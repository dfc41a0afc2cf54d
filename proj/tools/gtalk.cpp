#include "gtalk/data/synth.hpp"
#include "gtalk/eval/bench.hpp"
#include "gtalk/eval/report.hpp"
#include "gtalk/train/trainer.hpp"
#include "gtalk/util/error.hpp"
#include "gtalk/util/log.hpp"
#include "gtalk/util/parallel.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <optional>

using namespace gtalk;
namespace fs = std::filesystem;

namespace {

// Usage problems found after parsing (exit 1).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::size_t threads = 0;
};

void add_common(CLI::App* sub, Common& c, bool out_required = true) {
    sub->add_option("--config", c.config, "key = value file")->check(CLI::ExistingFile);
    sub->add_option("--seed", c.seed, "random seed (overrides the config)");
    auto* out = sub->add_option("--out", c.out, "output directory");
    if (out_required) out->required();
    sub->add_option("--threads", c.threads, "worker threads (default: all cores)")->check(CLI::PositiveNumber);
}

fs::path manifest_path(const std::string& data) {
    const fs::path p(data);
    return fs::is_directory(p) ? p / data::kManifestName : p;
}

data::Split parse_split(const std::string& s) {
    if (s == "test") return data::Split::test;
    if (s == "train") return data::Split::train;
    if (s == "all") return data::Split::all;
    throw UsageError("split must be test, train or all");
}

// Keys of a subcommand config file that mirror its long options; command-line
// values win.
void apply_config(CLI::App* sub, const std::string& path, const std::vector<std::string>& keys) {
    if (path.empty()) return;
    auto kv = KeyValues::load(path);
    for (const auto& key : keys) {
        if (!kv.has(key)) continue;
        std::string v;
        kv.read(key, v);
        auto* opt = sub->get_option("--" + key);
        if (opt->count() == 0) {
            opt->clear();
            opt->add_result(v);
            opt->run_callback();
        }
    }
    kv.check_all_used();
}

train::TrainConfig train_config(const Common& c, std::optional<std::uint64_t> iterations) {
    train::TrainConfig cfg;
    if (!c.config.empty()) cfg = train::load_train_config(c.config, cfg);
    if (c.seed) cfg.seed = *c.seed;
    if (iterations) cfg.iterations = *iterations;
    cfg.validate();
    return cfg;
}

void print_summary(const eval::ReportSummary& s) {
    if (s.test_psnr > 0) std::printf("test  PSNR %.3f dB  SSIM %.4f\n", s.test_psnr, s.test_ssim);
    if (s.train_psnr > 0) std::printf("train PSNR %.3f dB  SSIM %.4f\n", s.train_psnr, s.train_ssim);
    if (!s.attention.empty())
        std::printf("attention ratios: audio/mouth %.2f  eye/eyes %.2f\n", s.attention_of(model::kAudioToken).mouth_ratio(),
                    s.attention_of(model::kEyeToken).eye_ratio());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Audio-driven Gaussian head pipeline: synthetic data, two-stage training, evaluation"};
    app.name("gtalk");
    app.require_subcommand(1);
    app.fallthrough();
    bool verbose = false, quiet = false;
    app.add_flag("-v,--verbose", verbose, "debug logging");
    app.add_flag("-q,--quiet", quiet, "errors only");

    Common common;

    auto* synth = app.add_subcommand("synth-data", "generate a synthetic talking-head dataset");
    add_common(synth, common);
    std::string scenario = "dynamic";
    std::optional<std::size_t> frames;
    synth->add_option("--scenario", scenario, "dynamic or static")->check(CLI::IsMember({"dynamic", "static"}));
    synth->add_option("--frames", frames, "frame count");

    std::string data_dir, checkpoint_path, canonical_path, resume_path;
    std::optional<std::uint64_t> iterations;

    auto* tcan = app.add_subcommand("train-canonical", "fit the static canonical head");
    add_common(tcan, common);
    tcan->add_option("--data", data_dir, "dataset directory or manifest")->required();
    tcan->add_option("--iterations", iterations, "training steps");
    tcan->add_option("--resume", resume_path, "continue from a checkpoint")->check(CLI::ExistingFile);

    bool from_scratch = false;
    auto* tdef = app.add_subcommand("train-deform", "fit the conditioned deformation stage");
    add_common(tdef, common);
    tdef->add_option("--data", data_dir, "dataset directory or manifest")->required();
    tdef->add_option("--iterations", iterations, "training steps");
    auto* can_opt = tdef->add_option("--canonical", canonical_path, "canonical checkpoint to start from")->check(CLI::ExistingFile);
    auto* scratch_opt = tdef->add_flag("--from-scratch", from_scratch, "train both stages jointly from the initial points");
    auto* resume_opt = tdef->add_option("--resume", resume_path, "continue from a checkpoint")->check(CLI::ExistingFile);
    can_opt->excludes(scratch_opt);
    resume_opt->excludes(can_opt)->excludes(scratch_opt);

    std::string split = "test";
    std::size_t attention_frames = 3, bench_frames = 100, gaussians = 10000, size = 256;

    auto* render = app.add_subcommand("render", "render dataset frames from a checkpoint");
    add_common(render, common);
    render->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
    render->add_option("--data", data_dir)->required();
    render->add_option("--split", split, "test, train or all");

    auto* report = app.add_subcommand("report", "metrics, renders, attention maps and triplane images");
    add_common(report, common);
    report->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
    report->add_option("--data", data_dir)->required();
    report->add_option("--split", split, "test, train or all");
    report->add_option("--attention-frames", attention_frames, "frames with token maps");

    auto* bench = app.add_subcommand("bench", "inference FPS and tiled versus reference compositing");
    add_common(bench, common);
    bench->add_option("--checkpoint", checkpoint_path, "checkpoint for the FPS run")->check(CLI::ExistingFile);
    bench->add_option("--data", data_dir, "dataset for the FPS run");
    bench->add_option("--frames", bench_frames, "timed frames")->check(CLI::PositiveNumber);
    bench->add_option("--gaussians", gaussians, "Gaussians in the compositor comparison")->check(CLI::PositiveNumber);
    bench->add_option("--size", size, "image size of the compositor comparison")->check(CLI::PositiveNumber);

    auto* vtri = app.add_subcommand("viz-triplane", "PCA images of the triplane feature planes");
    add_common(vtri, common);
    vtri->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);

    auto* vatt = app.add_subcommand("viz-attention", "per-token attention maps");
    add_common(vatt, common);
    vatt->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
    vatt->add_option("--data", data_dir)->required();
    vatt->add_option("--split", split, "test, train or all");
    vatt->add_option("--frames", attention_frames, "frames to visualize");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        const CLI::App* failed = &app;
        for (auto* sub : app.get_subcommands()) failed = sub;
        std::cerr << failed->help();
        return 1;
    }

    log::set_level(quiet ? log::Level::error : verbose ? log::Level::debug : log::Level::info);
    if (common.threads) set_thread_count(common.threads);
    const fs::path out(common.out);

    try {
        if (synth->parsed()) {
            auto s = scenario == "static" ? data::static_scenario() : data::default_scenario();
            if (!common.config.empty()) s = data::scenario_from_config(common.config, s);
            if (common.seed) s.seed = *common.seed;
            if (frames) s.frames = *frames;
            const auto m = data::generate(s, out);
            std::printf("wrote %zu frames to %s\n", m.frames.size(), out.string().c_str());
        } else if (tcan->parsed()) {
            const auto ds = data::load_dataset(manifest_path(data_dir));
            train::RunOptions ro{out, {}, quiet};
            if (!resume_path.empty()) {
                auto ck = train::load_checkpoint(resume_path);
                if (ck.stage != train::Stage::canonical) throw UsageError("--resume needs a canonical checkpoint here");
                if (iterations) ck.config.iterations = *iterations;
                auto t = train::Trainer::resume(ds, std::move(ck));
                train::run(t, ro);
            } else {
                train::train_canonical(ds, train_config(common, iterations), ro);
            }
            std::printf("wrote %s\n", (out / "canonical.ckpt").string().c_str());
        } else if (tdef->parsed()) {
            if (canonical_path.empty() && !from_scratch && resume_path.empty())
                throw UsageError("train-deform needs --canonical CKPT from train-canonical, or --from-scratch");
            const auto ds = data::load_dataset(manifest_path(data_dir));
            train::RunOptions ro{out, {}, quiet};
            if (!resume_path.empty()) {
                auto ck = train::load_checkpoint(resume_path);
                if (ck.stage != train::Stage::deform) throw UsageError("--resume needs a deformation checkpoint here");
                if (iterations) ck.config.iterations = *iterations;
                auto t = train::Trainer::resume(ds, std::move(ck));
                train::run(t, ro);
            } else if (from_scratch) {
                train::train_deform(ds, train_config(common, iterations), nullptr, ro);
            } else {
                const auto warm = train::load_checkpoint(canonical_path);
                if (warm.stage != train::Stage::canonical)
                    throw UsageError(canonical_path + " is not a canonical-stage checkpoint");
                train::train_deform(ds, train_config(common, iterations), &warm, ro);
            }
            std::printf("wrote %s\n", (out / "deform.ckpt").string().c_str());
        } else if (render->parsed()) {
            apply_config(render, common.config, {"split"});
            const auto ck = train::load_checkpoint(checkpoint_path);
            const auto ds = data::load_dataset(manifest_path(data_dir));
            eval::write_renders(ck, ds, parse_split(split), out);
        } else if (report->parsed()) {
            apply_config(report, common.config, {"split", "attention-frames"});
            const auto ck = train::load_checkpoint(checkpoint_path);
            const auto ds = data::load_dataset(manifest_path(data_dir));
            eval::ReportOptions opt;
            opt.split = parse_split(split);
            opt.attention_frames = attention_frames;
            print_summary(eval::render_report(ck, ds, out, opt));
        } else if (bench->parsed()) {
            apply_config(bench, common.config, {"frames", "gaussians", "size"});
            if (checkpoint_path.empty() != data_dir.empty())
                throw UsageError("bench needs both --checkpoint and --data for the FPS run");
            fs::create_directories(out);
            if (!checkpoint_path.empty()) {
                const auto ck = train::load_checkpoint(checkpoint_path);
                const auto ds = data::load_dataset(manifest_path(data_dir), data::Split::test);
                const auto r = eval::fps_benchmark(ck, ds, bench_frames);
                eval::write_fps_report(r, out / "fps.csv", out / "fps.txt");
                std::printf("%zu Gaussians at %dx%d: %.2f fps\n", r.gaussians, r.width, r.height, r.mean_fps);
            }
            const int px = static_cast<int>(size);
            const auto set = eval::benchmark_scene(gaussians, common.seed.value_or(0));
            const auto sp = eval::compare_renderers(set, eval::benchmark_camera(px, px), Image(px, px, 0.0));
            std::FILE* f = std::fopen((out / "renderer.csv").string().c_str(), "w");
            if (!f) throw Error("cannot write " + (out / "renderer.csv").string());
            std::fprintf(f, "gaussians,size,tiled_ms,reference_ms,speedup,tiled_fps\n%zu,%d,%.4f,%.4f,%.3f,%.2f\n", gaussians,
                         px, sp.tiled_ms, sp.reference_ms, sp.ratio(), 1000.0 / sp.tiled_ms);
            std::fclose(f);
            std::printf("compositing %zu Gaussians at %dx%d: tiled %.2f ms, reference %.2f ms (%.1fx)\n", gaussians, px, px,
                        sp.tiled_ms, sp.reference_ms, sp.ratio());
        } else if (vtri->parsed()) {
            const auto ck = train::load_checkpoint(checkpoint_path);
            eval::write_triplane_images(ck.canonical.grid, out);
        } else if (vatt->parsed()) {
            apply_config(vatt, common.config, {"split", "frames"});
            const auto ck = train::load_checkpoint(checkpoint_path);
            if (!ck.deform) throw UsageError("viz-attention needs a deformation-stage checkpoint");
            const auto ds = data::load_dataset(manifest_path(data_dir));
            eval::write_attention_maps(ck, ds, parse_split(split), attention_frames, out);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
