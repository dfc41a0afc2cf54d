#include "gtalk/eval/report.hpp"

#include "gtalk/eval/metrics.hpp"
#include "gtalk/raster/rasterizer.hpp"
#include "gtalk/triplane/triplane.hpp"
#include "gtalk/util/error.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace gtalk::eval {
namespace {

std::vector<std::size_t> split_positions(const data::Dataset& ds, data::Split split) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
        const bool test = data::is_test_index(ds.frames[i].index);
        if (split == data::Split::all || (split == data::Split::test) == test) out.push_back(i);
    }
    return out;
}

std::string frame_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04zu", index);
    return buf;
}

void make_dir(const std::filesystem::path& p) {
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    if (ec) throw Error("cannot create directory " + p.string() + ": " + ec.message());
}

// Side-by-side panel of equally sized images.
Image hstack(const std::vector<Image>& parts) {
    Image out(static_cast<int>(parts.size()) * parts.front().width, parts.front().height);
    for (std::size_t k = 0; k < parts.size(); ++k)
        for (int r = 0; r < out.height; ++r)
            for (int c = 0; c < parts[k].width; ++c)
                for (int ch = 0; ch < 3; ++ch) out.at(r, static_cast<int>(k) * parts[k].width + c, ch) = parts[k].at(r, c, ch);
    return out;
}

Image triplane_panel(const tri::TriplaneGrid& grid) {
    const int size = *std::max_element(grid.resolutions.begin(), grid.resolutions.end());
    Image out(3 * size, static_cast<int>(grid.levels()) * size);
    for (std::size_t l = 0; l < grid.levels(); ++l) {
        const int res = grid.resolutions[l];
        for (int p = 0; p < 3; ++p) {
            const auto img = tri::pca_plane_image(grid.planes[l * 3 + p], res);
            for (int r = 0; r < size; ++r)
                for (int c = 0; c < size; ++c) {
                    const int sr = r * res / size, sc = c * res / size;
                    for (int ch = 0; ch < 3; ++ch)
                        out.at(static_cast<int>(l) * size + r, p * size + c, ch) = img[(static_cast<std::size_t>(sr) * res + sc) * 3 + ch];
                }
        }
    }
    return out;
}

} // namespace

const TokenAttention& ReportSummary::attention_of(std::size_t token) const {
    for (const auto& a : attention)
        if (a.token == token && a.layer == std::numeric_limits<std::size_t>::max()) return a;
    throw DataError("report has no attention summary for token " + std::to_string(token));
}

GaussianGroups assign_groups(const diff::Array& positions, const data::DatasetManifest& manifest) {
    const auto pts = read_point_file(manifest.points_path());
    if (pts.empty()) throw DataError("empty point file " + manifest.points_path().string());
    std::vector<bool> mouth_id(pts.size(), false), eye_id(pts.size(), false);
    for (auto id : manifest.mouth_ids)
        if (id < pts.size()) mouth_id[id] = true;
    for (auto id : manifest.eye_ids)
        if (id < pts.size()) eye_id[id] = true;
    const std::size_t n = positions.empty() ? 0 : positions.dim(0);
    GaussianGroups g{std::vector<bool>(n), std::vector<bool>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d p(positions.at(i, 0), positions.at(i, 1), positions.at(i, 2));
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < pts.size(); ++j) {
            const double d = (pts[j] - p).squaredNorm();
            if (d < best_d) best_d = d, best = j;
        }
        g.mouth[i] = mouth_id[best];
        g.eye[i] = eye_id[best];
    }
    return g;
}

ReportSummary evaluate(const train::Checkpoint& checkpoint, const data::Dataset& dataset, const ReportOptions& options) {
    ReportSummary s;
    const auto scored = split_positions(dataset, options.split);
    if (scored.empty()) throw DataError("no frames in the requested split");
    const auto groups = assign_groups(checkpoint.canonical.positions, dataset.manifest);

    const std::size_t layers = checkpoint.deform ? checkpoint.deform->config.layers : 0;
    const std::size_t heads = checkpoint.deform ? checkpoint.deform->config.heads : 1;
    // [token][layer] sums of the per-frame group means.
    std::vector<std::vector<TokenAttention>> acc(model::kTokenCount, std::vector<TokenAttention>(layers));

    std::size_t n_test = 0, n_train = 0;
    for (std::size_t pos : scored) {
        const auto& f = dataset.frames[pos];
        const Image gt = from_8bit(f.image), bg = from_8bit(f.background);
        GaussianSet set;
        std::vector<diff::Array> scores;
        if (checkpoint.deform) {
            auto r = model::run_frame(checkpoint.canonical, *checkpoint.deform, f.condition);
            set = std::move(r.deformed);
            scores = std::move(r.scores);
        } else {
            set = model::assemble_canonical(checkpoint.canonical);
        }
        const Image img = raster::render(set, f.condition.camera, bg);
        FrameMetrics m{f.index, data::is_test_index(f.index), psnr(img, gt), ssim(img, gt)};
        s.frames.push_back(m);
        if (m.test) {
            s.test_psnr += m.psnr, s.test_ssim += m.ssim, ++n_test;
        } else {
            s.train_psnr += m.psnr, s.train_ssim += m.ssim, ++n_train;
        }

        for (std::size_t l = 0; l < scores.size(); ++l) {
            for (std::size_t t = 0; t < model::kTokenCount; ++t) {
                const auto w = model::token_attention(scores[l], heads, t);
                double sums[4] = {0, 0, 0, 0};
                std::size_t counts[4] = {0, 0, 0, 0};
                for (std::size_t i = 0; i < w.size(); ++i) {
                    const int a = groups.mouth[i] ? 0 : 1, b = groups.eye[i] ? 2 : 3;
                    sums[a] += w[i], ++counts[a];
                    sums[b] += w[i], ++counts[b];
                }
                auto mean = [&](int k) { return counts[k] ? sums[k] / static_cast<double>(counts[k]) : 0.0; };
                auto& ta = acc[t][l];
                ta.mouth += mean(0);
                ta.non_mouth += mean(1);
                ta.eye += mean(2);
                ta.non_eye += mean(3);
            }
        }
    }
    if (n_test) s.test_psnr /= n_test, s.test_ssim /= n_test;
    if (n_train) s.train_psnr /= n_train, s.train_ssim /= n_train;

    const double nf = static_cast<double>(scored.size());
    for (std::size_t t = 0; t < model::kTokenCount && layers; ++t) {
        TokenAttention all{t, std::numeric_limits<std::size_t>::max()};
        for (std::size_t l = 0; l < layers; ++l) {
            TokenAttention a = acc[t][l];
            a.token = t;
            a.layer = l;
            a.mouth /= nf, a.non_mouth /= nf, a.eye /= nf, a.non_eye /= nf;
            all.mouth += a.mouth / layers, all.non_mouth += a.non_mouth / layers;
            all.eye += a.eye / layers, all.non_eye += a.non_eye / layers;
            s.attention.push_back(a);
        }
        s.attention.push_back(all);
    }
    return s;
}

void write_renders(const train::Checkpoint& checkpoint, const data::Dataset& dataset, data::Split split,
                   const std::filesystem::path& dir) {
    make_dir(dir);
    for (std::size_t pos : split_positions(dataset, split)) {
        const auto& f = dataset.frames[pos];
        const Image img = raster::render(frame_scene(checkpoint, f.condition), f.condition.camera, from_8bit(f.background));
        write_png(dir / (frame_name(f.index) + ".png"), img);
    }
}

void write_attention_maps(const train::Checkpoint& checkpoint, const data::Dataset& dataset, data::Split split,
                          std::size_t frames, const std::filesystem::path& dir) {
    if (!checkpoint.deform) throw DataError("attention maps need a deformation-stage checkpoint");
    make_dir(dir);
    const auto& m = *checkpoint.deform;
    const auto scored = split_positions(dataset, split);
    for (std::size_t k = 0; k < std::min(frames, scored.size()); ++k) {
        const auto& f = dataset.frames[scored[k]];
        const auto r = model::run_frame(checkpoint.canonical, m, f.condition);
        const Image black(f.image.width, f.image.height, 0.0);
        std::vector<Image> panel{raster::render(r.deformed, f.condition.camera, from_8bit(f.background))};
        for (std::size_t t = 0; t < model::kTokenCount; ++t) {
            const auto colors = model::attention_to_colors(r.scores, m.config.layers - 1, t, m.config.heads);
            const Image map = raster::render_colored(r.deformed, colors, f.condition.camera, black);
            write_png(dir / (frame_name(f.index) + "_" + model::kTokenNames[t] + ".png"), map);
            panel.push_back(map);
        }
        write_png(dir / (frame_name(f.index) + "_panel.png"), hstack(panel));
    }
}

void write_triplane_images(const tri::TriplaneGrid& grid, const std::filesystem::path& dir) {
    tri::export_pca_images(grid, dir);
    write_png(dir / "panel.png", triplane_panel(grid));
}

ReportSummary render_report(const train::Checkpoint& checkpoint, const data::Dataset& dataset,
                            const std::filesystem::path& out_dir, const ReportOptions& options) {
    make_dir(out_dir);
    const ReportSummary s = evaluate(checkpoint, dataset, options);
    if (options.write_renders) write_renders(checkpoint, dataset, options.split, out_dir / "renders");
    if (checkpoint.deform && options.attention_frames)
        write_attention_maps(checkpoint, dataset, options.split, options.attention_frames, out_dir / "attention");
    if (options.write_triplane) write_triplane_images(checkpoint.canonical.grid, out_dir / "triplane");

    char line[256];
    {
        std::ofstream csv(out_dir / "metrics.csv");
        if (!csv) throw Error("cannot write " + (out_dir / "metrics.csv").string());
        csv << "frame,split,psnr,ssim\n";
        for (const auto& m : s.frames) {
            std::snprintf(line, sizeof line, "%zu,%s,%.6f,%.6f\n", m.index, m.test ? "test" : "train", m.psnr, m.ssim);
            csv << line;
        }
        const bool any_test = std::any_of(s.frames.begin(), s.frames.end(), [](const auto& m) { return m.test; });
        const bool any_train = std::any_of(s.frames.begin(), s.frames.end(), [](const auto& m) { return !m.test; });
        if (any_test) std::snprintf(line, sizeof line, "mean,test,%.6f,%.6f\n", s.test_psnr, s.test_ssim), csv << line;
        if (any_train) std::snprintf(line, sizeof line, "mean,train,%.6f,%.6f\n", s.train_psnr, s.train_ssim), csv << line;
    }
    if (!s.attention.empty()) {
        std::ofstream csv(out_dir / "attention.csv");
        if (!csv) throw Error("cannot write " + (out_dir / "attention.csv").string());
        csv << "token,layer,mouth,non_mouth,mouth_ratio,eye,non_eye,eye_ratio\n";
        for (const auto& a : s.attention) {
            const std::string layer = a.layer == std::numeric_limits<std::size_t>::max() ? "mean" : std::to_string(a.layer);
            std::snprintf(line, sizeof line, "%s,%s,%.6f,%.6f,%.4f,%.6f,%.6f,%.4f\n", model::kTokenNames[a.token],
                          layer.c_str(), a.mouth, a.non_mouth, a.mouth_ratio(), a.eye, a.non_eye, a.eye_ratio());
            csv << line;
        }
    }
    {
        std::ofstream txt(out_dir / "summary.txt");
        if (!txt) throw Error("cannot write " + (out_dir / "summary.txt").string());
        txt << "checkpoint stage: " << train::stage_name(checkpoint.stage) << ", iteration " << checkpoint.iteration
            << ", " << checkpoint.canonical.size() << " Gaussians\n";
        std::snprintf(line, sizeof line, "scored frames: %zu\n", s.frames.size());
        txt << line;
        if (s.test_psnr > 0) std::snprintf(line, sizeof line, "test  PSNR %.3f dB  SSIM %.4f\n", s.test_psnr, s.test_ssim), txt << line;
        if (s.train_psnr > 0) std::snprintf(line, sizeof line, "train PSNR %.3f dB  SSIM %.4f\n", s.train_psnr, s.train_ssim), txt << line;
        if (!s.attention.empty()) {
            const auto& au = s.attention_of(model::kAudioToken);
            const auto& ey = s.attention_of(model::kEyeToken);
            std::snprintf(line, sizeof line, "audio token: mouth %.4f vs rest %.4f (ratio %.2f)\n", au.mouth, au.non_mouth,
                          au.mouth_ratio());
            txt << line;
            std::snprintf(line, sizeof line, "eye token:   eyes %.4f vs rest %.4f (ratio %.2f)\n", ey.eye, ey.non_eye, ey.eye_ratio());
            txt << line;
        }
        txt << "not computed: LPIPS, FID, CSIM, Sync, AUE and LMD need pretrained networks\n";
    }
    return s;
}

} // namespace gtalk::eval
