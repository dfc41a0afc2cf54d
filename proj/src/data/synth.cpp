#include "gtalk/data/synth.hpp"

#include "gtalk/raster/rasterizer.hpp"
#include "gtalk/util/config.hpp"
#include "gtalk/util/error.hpp"
#include "gtalk/util/parallel.hpp"
#include "gtalk/util/rng.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace gtalk::data {

namespace {

constexpr double kC0 = 0.28209479177387814;
constexpr double kAx = 0.42, kAy = 0.5, kAz = 0.45;  // head ellipsoid semi-axes

double logit(double p) { return std::log(p / (1.0 - p)); }

Eigen::Vector3d ellipsoid_normal(const Eigen::Vector3d& p) {
    return Eigen::Vector3d(p.x() / (kAx * kAx), p.y() / (kAy * kAy), p.z() / (kAz * kAz)).normalized();
}

// Point on the front (negative z) of the head ellipsoid, raised along the normal.
Eigen::Vector3d front_point(double x, double y, double lift) {
    const double r = 1.0 - x * x / (kAx * kAx) - y * y / (kAy * kAy);
    const Eigen::Vector3d p(x, y, -kAz * std::sqrt(std::max(r, 0.0)));
    return p + lift * ellipsoid_normal(p);
}

// Quaternion taking the local z axis onto n.
Eigen::Vector4d align_z(const Eigen::Vector3d& n) {
    if (n.z() < -1.0 + 1e-9) return {0.0, 1.0, 0.0, 0.0};
    Eigen::Vector4d q(1.0 + n.z(), -n.y(), n.x(), 0.0);
    return q / q.norm();
}

struct Builder {
    GaussianSet set;
    std::size_t next = 0;
    void put(const Eigen::Vector3d& p, const Eigen::Vector4d& q, const Eigen::Vector3d& scale,
             const Eigen::Vector3d& rgb, double opacity) {
        for (int c = 0; c < 3; ++c) {
            set.positions.at(next, c) = p[c];
            set.log_scales.at(next, c) = std::log(scale[c]);
            set.sh_coeffs.at(next, c) = (rgb[c] - 0.5) / kC0;
        }
        for (int c = 0; c < 4; ++c) set.rotations.at(next, c) = q[c];
        set.opacity_logits.at(next, 0) = logit(opacity);
        ++next;
    }
};

Eigen::Vector3d skin_color(const Eigen::Vector3d& p) {
    const Eigen::Vector3d skin(0.86 + 0.06 * p.y(), 0.66 + 0.05 * p.x(), 0.56 - 0.03 * p.y());
    const Eigen::Vector3d hair(0.28, 0.18, 0.12);
    const double h = std::clamp((-p.y() - 0.18) / 0.12, 0.0, 1.0) * std::clamp((p.z() + 0.35) / 0.2, 0.0, 1.0);
    return skin + h * (hair - skin);
}

constexpr double kInnerOpacityRest = 0.02;
constexpr double kEyeOpacity = 0.95;

Image8 background_image(int w, int h) {
    Image bg(w, h);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double t = (r + 0.5) / h, s = (c + 0.5) / w;
            bg.at(r, c, 0) = 0.55 - 0.25 * t + 0.05 * s;
            bg.at(r, c, 1) = 0.62 - 0.27 * t;
            bg.at(r, c, 2) = 0.72 - 0.27 * t - 0.04 * s;
        }
    return to_8bit(bg);
}

} // namespace

SynthScenario default_scenario() { return {}; }

SynthScenario static_scenario() {
    SynthScenario s;
    s.name = "static";
    s.dynamic = false;
    return s;
}

std::vector<std::uint32_t> SynthTemplate::mouth() const {
    std::vector<std::uint32_t> out(upper_lip);
    out.insert(out.end(), lower_lip.begin(), lower_lip.end());
    out.insert(out.end(), inner_mouth.begin(), inner_mouth.end());
    std::sort(out.begin(), out.end());
    return out;
}

SynthTemplate build_template(const SynthScenario& s) {
    if (s.head_gaussians < 10 || s.lip_gaussians < 2 || s.eye_gaussians < 1)
        throw DataError("synthetic template needs at least 10 head, 2 lip and 1 eye Gaussians");
    const std::size_t n = s.head_gaussians + 3 * s.lip_gaussians + 2 * s.eye_gaussians;
    Builder b;
    b.set = GaussianSet::zeros(n, 1);
    SynthTemplate t;
    Rng rng(derive_seed(s.seed, 1));

    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (std::size_t k = 0; k < s.head_gaussians; ++k) {
        const double y = 1.0 - 2.0 * (k + 0.5) / s.head_gaussians;
        const double r = std::sqrt(1.0 - y * y), phi = golden * k;
        Eigen::Vector3d p(kAx * r * std::cos(phi), kAy * y, kAz * r * std::sin(phi));
        for (int c = 0; c < 3; ++c) p[c] += rng.normal() * 0.004;
        b.put(p, align_z(ellipsoid_normal(p)), {0.055, 0.055, 0.025}, skin_color(p), 0.95);
    }
    auto lip_row = [&](std::vector<std::uint32_t>& ids, double y0, double bend, double lift, const Eigen::Vector3d& rgb) {
        for (std::size_t k = 0; k < s.lip_gaussians; ++k) {
            const double u = -1.0 + 2.0 * k / (s.lip_gaussians - 1);
            const double x = 0.09 * u, y = y0 + bend * u * u;
            const Eigen::Vector3d p = front_point(x, y, lift);
            ids.push_back(static_cast<std::uint32_t>(b.next));
            b.put(p, align_z(ellipsoid_normal(p)), {0.016, 0.011, 0.008}, rgb, 0.95);
        }
    };
    lip_row(t.upper_lip, 0.185, 0.012, 0.03, {0.70, 0.20, 0.24});
    lip_row(t.lower_lip, 0.225, -0.012, 0.03, {0.78, 0.27, 0.30});
    for (std::size_t k = 0; k < s.lip_gaussians; ++k) {
        const double u = -1.0 + 2.0 * (k % 10 + 0.5) / 10.0;
        const double row = (k / 10) % 2 == 0 ? -0.5 : 0.5;
        const double x = 0.065 * u, y = 0.205 + 0.008 * row;
        const Eigen::Vector3d p = front_point(x, y, 0.022);
        t.inner_mouth.push_back(static_cast<std::uint32_t>(b.next));
        b.put(p, align_z(ellipsoid_normal(p)), {0.014, 0.012, 0.006}, {0.20, 0.04, 0.06}, kInnerOpacityRest);
    }
    for (double side : {-1.0, 1.0}) {
        for (std::size_t k = 0; k < s.eye_gaussians; ++k) {
            const double rad = 0.035 * std::sqrt((k + 0.5) / s.eye_gaussians), ang = golden * k;
            const double x = side * 0.15 + rad * std::cos(ang), y = -0.04 + 0.7 * rad * std::sin(ang);
            const Eigen::Vector3d p = front_point(x, y, 0.03);
            t.eyes.push_back(static_cast<std::uint32_t>(b.next));
            b.put(p, align_z(ellipsoid_normal(p)), {0.013, 0.011, 0.006}, {0.07, 0.07, 0.10}, kEyeOpacity);
        }
    }
    t.rest = std::move(b.set);
    return t;
}

double audio_reference_norm(const SynthScenario& s) {
    if (!s.dynamic) return 0.0;
    return 0.5 * std::sqrt(static_cast<double>((s.audio_dim - 4) / 2));
}

std::vector<std::vector<double>> audio_track(const SynthScenario& s) {
    if (s.audio_dim < 4 || s.audio_dim % 2 != 0)
        throw DataError("synthetic audio dimension must be even and at least 4, got " + std::to_string(s.audio_dim));
    std::vector<std::vector<double>> track(s.frames, std::vector<double>(s.audio_dim, 0.0));
    if (!s.dynamic) return track;
    Rng rng(derive_seed(s.seed, 2));
    const double two_pi = 2.0 * std::numbers::pi;
    // Mouth-driving dims: sums of slow sinusoids.
    for (std::size_t d = 0; d < 4; ++d) {
        for (int j = 0; j < 3; ++j) {
            const double amp = rng.uniform(0.3, 0.8), f = rng.uniform(0.008, 0.05), ph = rng.uniform(0.0, two_pi);
            for (std::size_t n = 0; n < s.frames; ++n) track[n][d] += amp * std::sin(two_pi * f * n + ph);
        }
    }
    // Distractor dims: rotating pairs with constant norm.
    for (std::size_t d = 4; d < s.audio_dim; d += 2) {
        const double g = rng.uniform(0.005, 0.08), ph = rng.uniform(0.0, two_pi);
        for (std::size_t n = 0; n < s.frames; ++n) {
            track[n][d] = 0.5 * std::sin(two_pi * g * n + ph);
            track[n][d + 1] = 0.5 * std::cos(two_pi * g * n + ph);
        }
    }
    return track;
}

std::vector<double> eye_track(const SynthScenario& s) {
    std::vector<double> e(s.frames, 0.0);
    if (!s.dynamic) return e;
    Rng rng(derive_seed(s.seed, 3));
    for (double c = rng.uniform(5.0, 30.0); c < s.frames + 10.0; c += 45.0 + rng.uniform(-10.0, 10.0)) {
        for (std::size_t n = 0; n < s.frames; ++n) {
            const double z = (n - c) / 2.0;
            e[n] = std::max(e[n], std::exp(-z * z));
        }
    }
    for (double& v : e) v = std::clamp(v, 0.0, 1.0);
    return e;
}

double mouth_openness(const std::vector<double>& audio, double reference_norm, double scale) {
    double n2 = 0.0;
    for (double a : audio) n2 += a * a;
    if (!(scale > 0.0)) return 0.0;
    return std::clamp((std::sqrt(n2) - reference_norm) / scale, 0.0, 1.0);
}

GaussianSet pose_template(const SynthTemplate& t, const SynthScenario& s, double openness, double eye) {
    GaussianSet g = t.rest;
    const double travel = s.mouth_open * openness;
    for (auto id : t.lower_lip) g.positions.at(id, 1) += travel;
    for (auto id : t.upper_lip) g.positions.at(id, 1) -= 0.25 * travel;
    for (auto id : t.inner_mouth) {
        g.positions.at(id, 1) += 0.4 * travel;
        g.opacity_logits.at(id, 0) = logit(kInnerOpacityRest + 0.93 * openness);
    }
    for (auto id : t.eyes) g.opacity_logits.at(id, 0) = logit(0.01 + (kEyeOpacity - 0.01) * (1.0 - eye));
    return g;
}

Camera frame_camera(const SynthScenario& s, std::size_t frame) {
    Rng rng(derive_seed(s.seed, 4));
    const double p1 = rng.uniform(0.0, 2.0 * std::numbers::pi), p2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double yaw = s.yaw * std::sin(2.0 * std::numbers::pi * frame / 97.0 + p1);
    const double pitch = s.pitch * std::sin(2.0 * std::numbers::pi * frame / 61.0 + p2);
    const Eigen::Vector3d eye(s.distance * std::sin(yaw) * std::cos(pitch), -s.distance * std::sin(pitch),
                              -s.distance * std::cos(yaw) * std::cos(pitch));
    return Camera::look_at(eye, {0.0, 0.02, 0.0}, {0.0, -1.0, 0.0}, s.focal, s.focal, s.width, s.height);
}

namespace {

struct Tracks {
    std::vector<std::vector<double>> audio;
    std::vector<double> eyes;
    double reference = 0.0, scale = 0.0;
};

Tracks make_tracks(const SynthScenario& s) {
    Tracks t{audio_track(s), eye_track(s), audio_reference_norm(s), 0.0};
    for (const auto& a : t.audio) {
        double n2 = 0.0;
        for (double v : a) n2 += v * v;
        t.scale = std::max(t.scale, std::sqrt(n2) - t.reference);
    }
    return t;
}

GaussianSet posed_frame(const SynthTemplate& tmpl, const SynthScenario& s, const Tracks& tr, std::size_t n) {
    return pose_template(tmpl, s, mouth_openness(tr.audio[n], tr.reference, tr.scale), tr.eyes[n]);
}

} // namespace

Image8 render_frame(const SynthScenario& s, std::size_t frame) {
    if (frame >= s.frames) throw DataError("frame " + std::to_string(frame) + " outside the scenario");
    const Tracks tr = make_tracks(s);
    const GaussianSet posed = posed_frame(build_template(s), s, tr, frame);
    return to_8bit(raster::composite_reference(raster::project(posed, frame_camera(s, frame)),
                                               from_8bit(background_image(s.width, s.height)))
                       .image);
}

DatasetManifest generate(const SynthScenario& s, const std::filesystem::path& out_dir) {
    if (s.frames == 0) throw DataError("scenario has zero frames");
    std::error_code ec;
    std::filesystem::create_directories(out_dir / "frames", ec);
    if (ec) throw Error("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

    const SynthTemplate tmpl = build_template(s);
    const Tracks tr = make_tracks(s);

    // Model initialization points: the rest template, jittered.
    {
        Rng rng(derive_seed(s.seed, 5));
        diff::Array pts = tmpl.rest.positions;
        for (double& v : pts.values()) v += rng.normal() * s.point_jitter;
        write_point_file(out_dir / "points.txt", pts);
    }
    save_scene(tmpl.rest, out_dir / "template.scene");
    const Image8 bg8 = background_image(s.width, s.height);
    write_png(out_dir / "background.png", bg8);
    const Image bg = from_8bit(bg8);

    DatasetManifest m;
    m.root = out_dir;
    m.scenario = s.name;
    m.seed = s.seed;
    m.width = s.width;
    m.height = s.height;
    const Camera cam0 = frame_camera(s, 0);
    m.fx = cam0.fx;
    m.fy = cam0.fy;
    m.cx = cam0.cx;
    m.cy = cam0.cy;
    m.audio_dim = s.audio_dim;
    m.points = "points.txt";
    m.mouth_ids = tmpl.mouth();
    m.eye_ids = tmpl.eyes;
    m.frames.resize(s.frames);

    parallel_for(s.frames, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t n = begin; n < end; ++n) {
            const Camera cam = frame_camera(s, n);
            const GaussianSet posed = posed_frame(tmpl, s, tr, n);
            const Image img = raster::composite_reference(raster::project(posed, cam), bg).image;
            char name[32];
            std::snprintf(name, sizeof name, "frames/frame_%04zu.png", n);
            write_png(out_dir / name, to_8bit(img));

            FrameRecord& f = m.frames[n];
            f.index = n;
            f.test = is_test_index(n);
            f.image = name;
            f.background = "background.png";
            f.extrinsic = cam.world_to_camera;
            f.audio = tr.audio[n];
            f.eye = tr.eyes[n];
            double x0 = 1e9, y0 = 1e9, x1 = -1e9, y1 = -1e9;
            for (auto id : m.mouth_ids) {
                const Eigen::Vector3d p(posed.positions.at(id, 0), posed.positions.at(id, 1), posed.positions.at(id, 2));
                const Eigen::Vector3d c = cam.rotation() * p + cam.translation();
                const double u = cam.fx * c.x() / c.z() + cam.cx, v = cam.fy * c.y() / c.z() + cam.cy;
                x0 = std::min(x0, u);
                x1 = std::max(x1, u);
                y0 = std::min(y0, v);
                y1 = std::max(y1, v);
            }
            constexpr double margin = 6.0;
            f.lip.x0 = std::clamp(static_cast<int>(std::floor(x0 - margin)), 0, s.width - 1);
            f.lip.y0 = std::clamp(static_cast<int>(std::floor(y0 - margin)), 0, s.height - 1);
            f.lip.x1 = std::clamp(static_cast<int>(std::ceil(x1 + margin)), f.lip.x0 + 1, s.width);
            f.lip.y1 = std::clamp(static_cast<int>(std::ceil(y1 + margin)), f.lip.y0 + 1, s.height);
        }
    });
    write_manifest(m, out_dir / kManifestName);
    return m;
}

SynthScenario scenario_from_config(const std::filesystem::path& path, SynthScenario s) {
    auto kv = KeyValues::load(path);
    kv.read("name", s.name);
    kv.read("dynamic", s.dynamic);
    kv.read("frames", s.frames);
    kv.read("width", s.width);
    kv.read("height", s.height);
    kv.read("focal", s.focal);
    kv.read("audio_dim", s.audio_dim);
    kv.read("head_gaussians", s.head_gaussians);
    kv.read("lip_gaussians", s.lip_gaussians);
    kv.read("eye_gaussians", s.eye_gaussians);
    kv.read("distance", s.distance);
    kv.read("yaw", s.yaw);
    kv.read("pitch", s.pitch);
    kv.read("mouth_open", s.mouth_open);
    kv.read("point_jitter", s.point_jitter);
    kv.read("seed", s.seed);
    kv.check_all_used();
    if (s.width <= 0 || s.height <= 0) throw DataError("scenario size must be positive");
    return s;
}

} // namespace gtalk::data
