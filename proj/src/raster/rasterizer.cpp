#include "gtalk/raster/rasterizer.hpp"

#include "gtalk/scene/sh.hpp"
#include "gtalk/util/error.hpp"
#include "gtalk/util/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace gtalk::raster {

using diff::Array;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// alpha' of one Gaussian at a pixel center, or 0 when it is below the blend
// threshold. `min_power` lets most rejected pixels skip the exponential; it is
// padded so it never rejects a pixel that the exact test would keep.
template <typename T>
inline T blend_alpha(const BasicProjectedGaussian<T>& g, T min_power, T px, T py) {
    const T dx = px - g.x;
    const T dy = py - g.y;
    const T power = T(-0.5) * (g.conic[0] * dx * dx + g.conic[2] * dy * dy) - g.conic[1] * dx * dy;
    if (power < min_power) return T(0);
    const T alpha = g.opacity * std::exp(power);
    return alpha < T(kMinBlendAlpha) ? T(0) : alpha;
}

template <typename T>
std::vector<T> min_powers(const BasicProjection<T>& p) {
    std::vector<T> out;
    out.reserve(p.gaussians.size());
    for (const auto& g : p.gaussians) out.push_back(std::log(T(kMinBlendAlpha) / g.opacity) - T(1e-3));
    return out;
}

template <typename T>
bool depth_less(const BasicProjectedGaussian<T>& a, const BasicProjectedGaussian<T>& b) {
    return a.depth < b.depth || (a.depth == b.depth && a.id < b.id);
}

struct ProjectionGeometry {
    Eigen::Vector3d t;        // camera-space center
    Eigen::Vector4d q_unit;
    double q_len = 0;
    Eigen::Matrix3d rot;      // from q_unit
    Eigen::Vector3d scale;
    Eigen::Matrix3d sigma;
    Eigen::Matrix<double, 2, 3> J;
    Eigen::Matrix<double, 2, 3> M;  // J * W
    Eigen::Matrix2d cov2;           // with floor
};

ProjectionGeometry geometry_of(const GaussianSet& set, std::size_t i, const Camera& cam, const Eigen::Matrix3d& rw,
                               const Eigen::Vector3d& tw) {
    ProjectionGeometry g;
    const Eigen::Vector3d mu(set.positions.at(i, 0), set.positions.at(i, 1), set.positions.at(i, 2));
    g.t = rw * mu + tw;
    const Eigen::Vector4d q(set.rotations.at(i, 0), set.rotations.at(i, 1), set.rotations.at(i, 2), set.rotations.at(i, 3));
    g.q_len = q.norm();
    if (!(g.q_len > 0.0)) throw NumericError("Gaussian " + std::to_string(i) + " has a zero quaternion");
    g.q_unit = q / g.q_len;
    g.rot = rotation_from_quaternion(g.q_unit);
    g.scale = Eigen::Vector3d(std::exp(set.log_scales.at(i, 0)), std::exp(set.log_scales.at(i, 1)),
                              std::exp(set.log_scales.at(i, 2)));
    const Eigen::Matrix3d m3 = g.rot * g.scale.asDiagonal();
    g.sigma = m3 * m3.transpose();
    const double z = g.t.z(), iz = 1.0 / z, iz2 = iz * iz;
    g.J << cam.fx * iz, 0.0, -cam.fx * g.t.x() * iz2, 0.0, cam.fy * iz, -cam.fy * g.t.y() * iz2;
    g.M = g.J * rw;
    g.cov2 = g.M * g.sigma * g.M.transpose();
    g.cov2(0, 0) += kLowPassFloor;
    g.cov2(1, 1) += kLowPassFloor;
    return g;
}

Eigen::Vector3d view_direction(const GaussianSet& set, std::size_t i, const Eigen::Vector3d& center, double* length) {
    const Eigen::Vector3d v(set.positions.at(i, 0) - center.x(), set.positions.at(i, 1) - center.y(),
                            set.positions.at(i, 2) - center.z());
    const double len = v.norm();
    if (length) *length = len;
    return len > 0.0 ? Eigen::Vector3d(v / len) : Eigen::Vector3d(0.0, 0.0, 1.0);
}

} // namespace

Projection project(const GaussianSet& set, const Camera& cam, const Array* colors) {
    cam.validate();
    const std::size_t n = set.size();
    if (n == 0) throw DataError("project: empty Gaussian set");
    if (colors && (colors->rank() != 2 || colors->dim(0) != n || colors->dim(1) != 3))
        throw ShapeError("project: colors must be N x 3 with N = " + std::to_string(n) + ", got " +
                         diff::shape_string(colors->shape()));
    const Eigen::Matrix3d rw = cam.rotation();
    const Eigen::Vector3d tw = cam.translation();
    const Eigen::Vector3d center = cam.center();
    const std::size_t nb = sh_coeff_count(set.sh_degree);

    Projection out;
    out.width = cam.width;
    out.height = cam.height;
    out.source_count = n;
    out.gaussians.reserve(n);
    std::array<double, 16> basis{};
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d mu(set.positions.at(i, 0), set.positions.at(i, 1), set.positions.at(i, 2));
        if ((rw * mu + tw).z() <= kNearPlane) {
            ++out.culled;
            continue;
        }
        const ProjectionGeometry geo = geometry_of(set, i, cam, rw, tw);
        ProjectedGaussian g;
        g.id = static_cast<std::uint32_t>(i);
        g.x = cam.fx * geo.t.x() / geo.t.z() + cam.cx;
        g.y = cam.fy * geo.t.y() / geo.t.z() + cam.cy;
        g.depth = geo.t.z();
        g.cov[0] = geo.cov2(0, 0);
        g.cov[1] = geo.cov2(0, 1);
        g.cov[2] = geo.cov2(1, 1);
        const double det = g.cov[0] * g.cov[2] - g.cov[1] * g.cov[1];
        if (!(det > 0.0)) throw NumericError("project: singular 2D covariance for Gaussian " + std::to_string(i));
        g.conic[0] = g.cov[2] / det;
        g.conic[1] = -g.cov[1] / det;
        g.conic[2] = g.cov[0] / det;
        if (colors) {
            for (int c = 0; c < 3; ++c) g.rgb[c] = colors->at(i, c);
        } else {
            sh_basis(view_direction(set, i, center, nullptr), set.sh_degree, basis);
            for (int c = 0; c < 3; ++c) {
                double v = 0.5;
                for (std::size_t j = 0; j < nb; ++j) v += basis[j] * set.sh_coeffs.at(i, j * 3 + c);
                g.rgb[c] = std::clamp(v, 0.0, 1.0);
            }
        }
        g.opacity = sigmoid(set.opacity_logits.at(i, 0));
        if (g.opacity * 255.0 > 1.0) {
            // Bounding box of the ellipse where opacity * weight >= 1/255.
            const double r2 = 2.0 * std::log(255.0 * g.opacity);
            const double ex = std::sqrt(r2 * g.cov[0]) * (1.0 + 1e-9) + 1e-6;
            const double ey = std::sqrt(r2 * g.cov[2]) * (1.0 + 1e-9) + 1e-6;
            const double lo_x = std::ceil(g.x - ex - 0.5), hi_x = std::floor(g.x + ex - 0.5);
            const double lo_y = std::ceil(g.y - ey - 0.5), hi_y = std::floor(g.y + ey - 0.5);
            if (hi_x >= 0.0 && hi_y >= 0.0 && lo_x <= cam.width - 1 && lo_y <= cam.height - 1) {
                g.min_x = static_cast<int>(std::max(0.0, lo_x));
                g.max_x = static_cast<int>(std::min<double>(cam.width - 1, hi_x));
                g.min_y = static_cast<int>(std::max(0.0, lo_y));
                g.max_y = static_cast<int>(std::min<double>(cam.height - 1, hi_y));
            }
        }
        out.gaussians.push_back(g);
    }
    return out;
}

ProjectionF to_float(const Projection& p) {
    ProjectionF out;
    out.width = p.width;
    out.height = p.height;
    out.source_count = p.source_count;
    out.culled = p.culled;
    out.gaussians.reserve(p.gaussians.size());
    for (const auto& g : p.gaussians) {
        BasicProjectedGaussian<float> f;
        f.id = g.id;
        f.x = static_cast<float>(g.x);
        f.y = static_cast<float>(g.y);
        for (int k = 0; k < 3; ++k) {
            f.cov[k] = static_cast<float>(g.cov[k]);
            f.conic[k] = static_cast<float>(g.conic[k]);
            f.rgb[k] = static_cast<float>(g.rgb[k]);
        }
        f.depth = static_cast<float>(g.depth);
        f.opacity = static_cast<float>(g.opacity);
        f.min_x = g.min_x;
        f.max_x = g.max_x;
        f.min_y = g.min_y;
        f.max_y = g.max_y;
        out.gaussians.push_back(f);
    }
    return out;
}

namespace {

template <typename T>
void check_background(const BasicProjection<T>& p, const BasicImage<T>& bg) {
    if (bg.width != p.width || bg.height != p.height)
        throw ShapeError("background is " + std::to_string(bg.width) + "x" + std::to_string(bg.height) +
                         " but the camera renders " + std::to_string(p.width) + "x" + std::to_string(p.height));
}

template <typename T>
void init_frame(BasicRenderedFrame<T>& f, const BasicProjection<T>& p, const BasicImage<T>& bg, bool records) {
    f.image = BasicImage<T>(p.width, p.height);
    if (records) f.background = bg;
    f.has_records = records;
    const std::size_t np = static_cast<std::size_t>(p.width) * p.height;
    f.final_transmittance.assign(np, T(1));
    if (records) {
        f.pixel_chunk.assign(np, 0);
        f.pixel_begin.assign(np, 0);
        f.pixel_count.assign(np, 0);
    }
}

} // namespace

template <typename T>
BasicRenderedFrame<T> composite_reference(const BasicProjection<T>& projected, const BasicImage<T>& background,
                                          const RenderOptions& options) {
    check_background(projected, background);
    BasicRenderedFrame<T> frame;
    init_frame(frame, projected, background, options.keep_records);
    const auto& gs = projected.gaussians;
    std::vector<std::uint32_t> order(gs.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return depth_less(gs[a], gs[b]); });
    if (options.keep_records) frame.chunks.resize(1);
    const std::vector<T> cutoff = min_powers(projected);

    for (int row = 0; row < projected.height; ++row) {
        for (int col = 0; col < projected.width; ++col) {
            const std::size_t pix = static_cast<std::size_t>(row) * projected.width + col;
            const T px = T(col) + T(0.5), py = T(row) + T(0.5);
            T trans = T(1);
            T color[3] = {T(0), T(0), T(0)};
            if (options.keep_records) frame.pixel_begin[pix] = static_cast<std::uint32_t>(frame.chunks[0].size());
            for (std::uint32_t idx : order) {
                const auto& g = gs[idx];
                const T alpha = blend_alpha(g, cutoff[idx], px, py);
                if (alpha == T(0)) continue;
                for (int c = 0; c < 3; ++c) color[c] += g.rgb[c] * alpha * trans;
                if (options.keep_records) frame.chunks[0].push_back({idx, alpha, trans});
                trans *= (T(1) - alpha);
            }
            if (options.keep_records)
                frame.pixel_count[pix] = static_cast<std::uint32_t>(frame.chunks[0].size() - frame.pixel_begin[pix]);
            frame.final_transmittance[pix] = trans;
            for (int c = 0; c < 3; ++c) frame.image.data[pix * 3 + c] = color[c] + trans * background.data[pix * 3 + c];
        }
    }
    return frame;
}

template <typename T>
BasicRenderedFrame<T> render_tiled(const BasicProjection<T>& projected, const BasicImage<T>& background,
                                   const RenderOptions& options) {
    check_background(projected, background);
    BasicRenderedFrame<T> frame;
    init_frame(frame, projected, background, options.keep_records);
    const int tiles_x = (projected.width + kTileSize - 1) / kTileSize;
    const int tiles_y = (projected.height + kTileSize - 1) / kTileSize;
    const std::size_t n_tiles = static_cast<std::size_t>(tiles_x) * tiles_y;
    const auto& gs = projected.gaussians;

    // Bin by the contribution bounding box, then sort each tile front to back.
    std::vector<std::uint32_t> tile_begin(n_tiles + 1, 0);
    for (const auto& g : gs) {
        if (g.min_x > g.max_x || g.min_y > g.max_y) continue;
        for (int ty = g.min_y / kTileSize; ty <= g.max_y / kTileSize; ++ty)
            for (int tx = g.min_x / kTileSize; tx <= g.max_x / kTileSize; ++tx) ++tile_begin[ty * tiles_x + tx + 1];
    }
    std::partial_sum(tile_begin.begin(), tile_begin.end(), tile_begin.begin());
    std::vector<std::uint32_t> tile_list(tile_begin.back());
    {
        std::vector<std::uint32_t> cursor(tile_begin.begin(), tile_begin.end() - 1);
        for (std::uint32_t i = 0; i < gs.size(); ++i) {
            const auto& g = gs[i];
            if (g.min_x > g.max_x || g.min_y > g.max_y) continue;
            for (int ty = g.min_y / kTileSize; ty <= g.max_y / kTileSize; ++ty)
                for (int tx = g.min_x / kTileSize; tx <= g.max_x / kTileSize; ++tx)
                    tile_list[cursor[ty * tiles_x + tx]++] = i;
        }
    }
    if (options.keep_records) frame.chunks.resize(n_tiles);
    const std::vector<T> cutoff = min_powers(projected);

    parallel_for(n_tiles, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t tile = begin; tile < end; ++tile) {
            auto first = tile_list.begin() + tile_begin[tile];
            auto last = tile_list.begin() + tile_begin[tile + 1];
            std::sort(first, last, [&](std::uint32_t a, std::uint32_t b) { return depth_less(gs[a], gs[b]); });
            const int tx = static_cast<int>(tile % tiles_x), ty = static_cast<int>(tile / tiles_x);
            const int x0 = tx * kTileSize, y0 = ty * kTileSize;
            const int x1 = std::min(projected.width, x0 + kTileSize), y1 = std::min(projected.height, y0 + kTileSize);
            auto* chunk = options.keep_records ? &frame.chunks[tile] : nullptr;
            for (int row = y0; row < y1; ++row) {
                for (int col = x0; col < x1; ++col) {
                    const std::size_t pix = static_cast<std::size_t>(row) * projected.width + col;
                    const T px = T(col) + T(0.5), py = T(row) + T(0.5);
                    T trans = T(1);
                    T color[3] = {T(0), T(0), T(0)};
                    if (chunk) {
                        frame.pixel_chunk[pix] = static_cast<std::uint32_t>(tile);
                        frame.pixel_begin[pix] = static_cast<std::uint32_t>(chunk->size());
                    }
                    for (auto it = first; it != last; ++it) {
                        const auto& g = gs[*it];
                        if (col < g.min_x || col > g.max_x || row < g.min_y || row > g.max_y) continue;
                        const T alpha = blend_alpha(g, cutoff[*it], px, py);
                        if (alpha == T(0)) continue;
                        for (int c = 0; c < 3; ++c) color[c] += g.rgb[c] * alpha * trans;
                        if (chunk) chunk->push_back({*it, alpha, trans});
                        trans *= (T(1) - alpha);
                        if (trans < T(kTransmittanceCutoff)) break;
                    }
                    if (chunk) frame.pixel_count[pix] = static_cast<std::uint32_t>(chunk->size() - frame.pixel_begin[pix]);
                    frame.final_transmittance[pix] = trans;
                    for (int c = 0; c < 3; ++c)
                        frame.image.data[pix * 3 + c] = color[c] + trans * background.data[pix * 3 + c];
                }
            }
        }
    });
    return frame;
}

template RenderedFrame composite_reference<double>(const Projection&, const Image&, const RenderOptions&);
template RenderedFrameF composite_reference<float>(const ProjectionF&, const ImageF&, const RenderOptions&);
template RenderedFrame render_tiled<double>(const Projection&, const Image&, const RenderOptions&);
template RenderedFrameF render_tiled<float>(const ProjectionF&, const ImageF&, const RenderOptions&);

SceneGradients render_backward(const RenderedFrame& frame, const Image& grad_image, const Projection& projected,
                               const GaussianSet& set, const Camera& cam, const BackwardOptions& options) {
    if (!frame.has_records) throw Error("render_backward: frame was rendered without blend records");
    if (!grad_image.same_shape(frame.image)) throw ShapeError("render_backward: gradient image shape mismatch");
    const std::size_t n = set.size();
    if (projected.source_count != n) throw ShapeError("render_backward: projection does not match the Gaussian set");

    SceneGradients out;
    out.positions = Array({n, 3});
    out.rotations = Array({n, 4});
    out.log_scales = Array({n, 3});
    out.sh_coeffs = Array({n, 3 * sh_coeff_count(set.sh_degree)});
    out.opacity_logits = Array({n, 1});
    if (options.color_gradients) out.colors = Array({n, 3});

    // Screen-space gradients per projected Gaussian: mean (2), conic (3), rgb (3), opacity (1).
    constexpr std::size_t kStride = 9;
    const std::size_t np = projected.gaussians.size();
    const std::size_t pixels = frame.image.pixel_count();
    const std::size_t workers = std::max<std::size_t>(1, std::min(thread_count(), pixels));
    std::vector<std::vector<double>> partial(workers);
    const auto& gs = projected.gaussians;
    const int width = frame.image.width;

    parallel_for(pixels, [&](std::size_t begin, std::size_t end, std::size_t w) {
        auto& acc = partial[w];
        acc.assign(np * kStride, 0.0);
        for (std::size_t pix = begin; pix < end; ++pix) {
            const auto recs = frame.records(pix);
            if (recs.empty()) continue;
            const double g[3] = {grad_image.data[pix * 3], grad_image.data[pix * 3 + 1], grad_image.data[pix * 3 + 2]};
            if (g[0] == 0.0 && g[1] == 0.0 && g[2] == 0.0) continue;
            // Color seen behind the current record, relative to its own transmittance.
            double rest[3] = {frame.background.data[pix * 3], frame.background.data[pix * 3 + 1],
                              frame.background.data[pix * 3 + 2]};
            const double px = (pix % width) + 0.5, py = static_cast<double>(pix / width) + 0.5;
            for (std::size_t k = recs.size(); k-- > 0;) {
                const auto& r = recs[k];
                const auto& pg = gs[r.index];
                double* a = acc.data() + r.index * kStride;
                double d_alpha = 0.0;
                for (int c = 0; c < 3; ++c) {
                    a[5 + c] += r.transmittance * r.alpha * g[c];
                    d_alpha += r.transmittance * (pg.rgb[c] - rest[c]) * g[c];
                    rest[c] = pg.rgb[c] * r.alpha + (1.0 - r.alpha) * rest[c];
                }
                const double weight = r.alpha / pg.opacity;
                a[8] += d_alpha * weight;
                const double d_power = d_alpha * r.alpha;
                const double dx = px - pg.x, dy = py - pg.y;
                a[0] += d_power * (pg.conic[0] * dx + pg.conic[1] * dy);
                a[1] += d_power * (pg.conic[1] * dx + pg.conic[2] * dy);
                a[2] += d_power * (-0.5 * dx * dx);
                a[3] += d_power * (-dx * dy);
                a[4] += d_power * (-0.5 * dy * dy);
            }
        }
    });
    std::vector<double> screen(np * kStride, 0.0);
    for (const auto& acc : partial)
        if (!acc.empty())
            for (std::size_t i = 0; i < screen.size(); ++i) screen[i] += acc[i];

    const Eigen::Matrix3d rw = cam.rotation();
    const Eigen::Vector3d tw = cam.translation();
    const Eigen::Vector3d center = cam.center();
    const std::size_t nb = sh_coeff_count(set.sh_degree);

    parallel_for(np, [&](std::size_t begin, std::size_t end, std::size_t) {
        std::array<double, 16> basis{};
        std::array<Eigen::Vector3d, 16> dbasis{};
        for (std::size_t k = begin; k < end; ++k) {
            const double* s = screen.data() + k * kStride;
            const auto& pg = gs[k];
            const std::size_t i = pg.id;
            bool any = false;
            for (std::size_t j = 0; j < kStride; ++j) any = any || s[j] != 0.0;
            if (!any) continue;

            const ProjectionGeometry geo = geometry_of(set, i, cam, rw, tw);
            const double z = geo.t.z(), iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;

            // Opacity logit.
            out.opacity_logits.at(i, 0) = s[8] * pg.opacity * (1.0 - pg.opacity);

            // Color.
            if (options.color_gradients)
                for (int c = 0; c < 3; ++c) out.colors->at(i, c) = s[5 + c];
            Eigen::Vector3d d_mu = Eigen::Vector3d::Zero();
            if (!options.colors_overridden) {
                double view_len = 0.0;
                const Eigen::Vector3d dir = view_direction(set, i, center, &view_len);
                sh_basis(dir, set.sh_degree, basis, std::span<Eigen::Vector3d>(dbasis.data(), nb));
                Eigen::Vector3d d_dir = Eigen::Vector3d::Zero();
                for (int c = 0; c < 3; ++c) {
                    double raw = 0.5;
                    for (std::size_t j = 0; j < nb; ++j) raw += basis[j] * set.sh_coeffs.at(i, j * 3 + c);
                    if (raw < 0.0 || raw > 1.0) continue;  // clamped channel
                    const double gc = s[5 + c];
                    for (std::size_t j = 0; j < nb; ++j) {
                        out.sh_coeffs.at(i, j * 3 + c) = basis[j] * gc;
                        d_dir += set.sh_coeffs.at(i, j * 3 + c) * gc * dbasis[j];
                    }
                }
                if (view_len > 0.0) d_mu += (d_dir - dir * dir.dot(d_dir)) / view_len;
            }

            // Conic -> 2D covariance.
            const Eigen::Matrix2d Q{{pg.conic[0], pg.conic[1]}, {pg.conic[1], pg.conic[2]}};
            const Eigen::Matrix2d GQ{{s[2], 0.5 * s[3]}, {0.5 * s[3], s[4]}};
            const Eigen::Matrix2d G2 = -Q * GQ * Q;

            // 2D covariance -> 3D covariance and projection matrix M = J W.
            const Eigen::Matrix3d G_sigma = geo.M.transpose() * G2 * geo.M;
            const Eigen::Matrix<double, 2, 3> G_M = 2.0 * G2 * geo.M * geo.sigma;
            const Eigen::Matrix<double, 2, 3> G_J = G_M * rw.transpose();

            Eigen::Vector3d d_t;
            d_t.x() = G_J(0, 2) * (-cam.fx * iz2) + s[0] * cam.fx * iz;
            d_t.y() = G_J(1, 2) * (-cam.fy * iz2) + s[1] * cam.fy * iz;
            d_t.z() = G_J(0, 0) * (-cam.fx * iz2) + G_J(0, 2) * (2.0 * cam.fx * geo.t.x() * iz3) +
                      G_J(1, 1) * (-cam.fy * iz2) + G_J(1, 2) * (2.0 * cam.fy * geo.t.y() * iz3) -
                      s[0] * cam.fx * geo.t.x() * iz2 - s[1] * cam.fy * geo.t.y() * iz2;
            d_mu += rw.transpose() * d_t;
            for (int c = 0; c < 3; ++c) out.positions.at(i, c) = d_mu[c];

            // Sigma = (R S)(R S)^T.
            const Eigen::Matrix3d m3 = geo.rot * geo.scale.asDiagonal();
            const Eigen::Matrix3d G_m3 = 2.0 * G_sigma * m3;
            const Eigen::Matrix3d G_R = G_m3 * geo.scale.asDiagonal();
            for (int a = 0; a < 3; ++a) {
                double gs_a = 0.0;
                for (int r = 0; r < 3; ++r) gs_a += geo.rot(r, a) * G_m3(r, a);
                out.log_scales.at(i, a) = gs_a * geo.scale[a];
            }
            const double w = geo.q_unit[0], x = geo.q_unit[1], y = geo.q_unit[2], zq = geo.q_unit[3];
            Eigen::Vector4d d_qn;
            d_qn[0] = 2.0 * (-zq * G_R(0, 1) + y * G_R(0, 2) + zq * G_R(1, 0) - x * G_R(1, 2) - y * G_R(2, 0) + x * G_R(2, 1));
            d_qn[1] = 2.0 * (y * G_R(0, 1) + zq * G_R(0, 2) + y * G_R(1, 0) - 2.0 * x * G_R(1, 1) - w * G_R(1, 2) +
                             zq * G_R(2, 0) + w * G_R(2, 1) - 2.0 * x * G_R(2, 2));
            d_qn[2] = 2.0 * (-2.0 * y * G_R(0, 0) + x * G_R(0, 1) + w * G_R(0, 2) + x * G_R(1, 0) + zq * G_R(1, 2) -
                             w * G_R(2, 0) + zq * G_R(2, 1) - 2.0 * y * G_R(2, 2));
            d_qn[3] = 2.0 * (-2.0 * zq * G_R(0, 0) - w * G_R(0, 1) + x * G_R(0, 2) + w * G_R(1, 0) - 2.0 * zq * G_R(1, 1) +
                             y * G_R(1, 2) + x * G_R(2, 0) + y * G_R(2, 1));
            const Eigen::Vector4d d_q = (d_qn - geo.q_unit * geo.q_unit.dot(d_qn)) / geo.q_len;
            for (int c = 0; c < 4; ++c) out.rotations.at(i, c) = d_q[c];
        }
    });
    return out;
}

Image render_colored(const GaussianSet& set, const Array& colors, const Camera& cam, const Image& background) {
    if (colors.rank() != 2 || colors.dim(0) != set.size() || colors.dim(1) != 3)
        throw ShapeError("render_colored: expected " + std::to_string(set.size()) + " x 3 colors, got " +
                         diff::shape_string(colors.shape()));
    return render_tiled(project(set, cam, &colors), background).image;
}

Image render(const GaussianSet& set, const Camera& cam, const Image& background) {
    return render_tiled(project(set, cam), background).image;
}

} // namespace gtalk::raster
