#include "gtalk/train/losses.hpp"

#include "gtalk/util/error.hpp"

#include <array>
#include <cmath>
#include <string>

namespace gtalk::train {
namespace {

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kSsimWindow>& window() {
    static const auto w = [] {
        std::array<double, kSsimWindow> g{};
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double d = i - kSsimWindow / 2;
            g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
            sum += g[i];
        }
        for (double& v : g) v /= sum;
        return g;
    }();
    return w;
}

void check_pair(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": image sizes differ (" + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" + std::to_string(b.height) + ")");
}

// Valid correlation with the separable window: [h, w] -> [h-10, w-10].
std::vector<double> blur_valid(const std::vector<double>& m, int h, int w) {
    const auto& g = window();
    const int vw = w - kSsimWindow + 1, vh = h - kSsimWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * vw), out(static_cast<std::size_t>(vh) * vw);
    for (int r = 0; r < h; ++r) {
        const double* src = &m[static_cast<std::size_t>(r) * w];
        double* dst = &rows[static_cast<std::size_t>(r) * vw];
        for (int c = 0; c < vw; ++c) {
            double s = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) s += g[k] * src[c + k];
            dst[c] = s;
        }
    }
    for (int r = 0; r < vh; ++r) {
        double* dst = &out[static_cast<std::size_t>(r) * vw];
        for (int c = 0; c < vw; ++c) dst[c] = 0.0;
        for (int k = 0; k < kSsimWindow; ++k) {
            const double* src = &rows[static_cast<std::size_t>(r + k) * vw];
            for (int c = 0; c < vw; ++c) dst[c] += g[k] * src[c];
        }
    }
    return out;
}

// Adjoint of blur_valid: [h-10, w-10] -> [h, w].
std::vector<double> blur_adjoint(const std::vector<double>& m, int h, int w) {
    const auto& g = window();
    const int vw = w - kSsimWindow + 1, vh = h - kSsimWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * vw, 0.0), out(static_cast<std::size_t>(h) * w, 0.0);
    for (int r = 0; r < vh; ++r) {
        const double* src = &m[static_cast<std::size_t>(r) * vw];
        for (int k = 0; k < kSsimWindow; ++k) {
            double* dst = &rows[static_cast<std::size_t>(r + k) * vw];
            for (int c = 0; c < vw; ++c) dst[c] += g[k] * src[c];
        }
    }
    for (int r = 0; r < h; ++r) {
        const double* src = &rows[static_cast<std::size_t>(r) * vw];
        double* dst = &out[static_cast<std::size_t>(r) * w];
        for (int c = 0; c < vw; ++c)
            for (int k = 0; k < kSsimWindow; ++k) dst[c + k] += g[k] * src[c];
    }
    return out;
}

void check_box(const Image& img, const data::LipBox& box) {
    if (box.empty() || box.x0 < 0 || box.y0 < 0 || box.x1 > img.width || box.y1 > img.height)
        throw DataError("lip box [" + std::to_string(box.x0) + ", " + std::to_string(box.x1) + ") x [" +
                        std::to_string(box.y0) + ", " + std::to_string(box.y1) + ") is empty or outside the " +
                        std::to_string(img.width) + "x" + std::to_string(img.height) + " image");
}

} // namespace

double ssim(const Image& a, const Image& b, Image* grad_a) {
    check_pair(a, b, "ssim");
    const int h = a.height, w = a.width;
    if (h < kSsimWindow || w < kSsimWindow)
        throw ShapeError("ssim needs images of at least 11x11, got " + std::to_string(w) + "x" + std::to_string(h));
    const int vw = w - kSsimWindow + 1, vh = h - kSsimWindow + 1;
    const std::size_t n = static_cast<std::size_t>(h) * w, nv = static_cast<std::size_t>(vh) * vw;
    const double inv_count = 1.0 / (3.0 * static_cast<double>(nv));
    if (grad_a) *grad_a = Image(w, h);

    double total = 0.0;
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (int ch = 0; ch < 3; ++ch) {
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = a.data[i * 3 + ch];
            y[i] = b.data[i * 3 + ch];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = blur_valid(x, h, w), my = blur_valid(y, h, w);
        const auto exx = blur_valid(xx, h, w), eyy = blur_valid(yy, h, w), exy = blur_valid(xy, h, w);
        std::vector<double> da, db, dc;
        if (grad_a) da.resize(nv), db.resize(nv), dc.resize(nv);
        double sum = 0.0;
        for (std::size_t i = 0; i < nv; ++i) {
            const double sxx = exx[i] - mx[i] * mx[i], syy = eyy[i] - my[i] * my[i], sxy = exy[i] - mx[i] * my[i];
            const double n1 = 2.0 * mx[i] * my[i] + kC1, n2 = 2.0 * sxy + kC2;
            const double d1 = mx[i] * mx[i] + my[i] * my[i] + kC1, d2 = sxx + syy + kC2;
            const double f = n1 * n2 / (d1 * d2);
            sum += f;
            if (grad_a) {
                const double df_dmx = 2.0 * my[i] * n2 / (d1 * d2) - f * 2.0 * mx[i] / d1;
                const double df_dsxx = -f / d2;
                const double df_dsxy = 2.0 * n1 / (d1 * d2);
                da[i] = (df_dmx - 2.0 * mx[i] * df_dsxx - my[i] * df_dsxy) * inv_count;
                db[i] = df_dsxx * inv_count;
                dc[i] = df_dsxy * inv_count;
            }
        }
        total += sum;
        if (grad_a) {
            const auto ga = blur_adjoint(da, h, w), gb = blur_adjoint(db, h, w), gc = blur_adjoint(dc, h, w);
            for (std::size_t i = 0; i < n; ++i) grad_a->data[i * 3 + ch] = ga[i] + 2.0 * x[i] * gb[i] + y[i] * gc[i];
        }
    }
    return total * inv_count;
}

double l1(const Image& a, const Image& b, Image* grad_a) {
    check_pair(a, b, "l1");
    return l1(a, b, data::LipBox{0, 0, a.width, a.height}, grad_a);
}

double l1(const Image& a, const Image& b, const data::LipBox& box, Image* grad_a) {
    check_pair(a, b, "l1");
    check_box(a, box);
    const double inv = 1.0 / (3.0 * (box.x1 - box.x0) * static_cast<double>(box.y1 - box.y0));
    if (grad_a) *grad_a = Image(a.width, a.height);
    double sum = 0.0;
    for (int r = box.y0; r < box.y1; ++r) {
        for (int c = box.x0; c < box.x1; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                const double d = a.at(r, c, ch) - b.at(r, c, ch);
                sum += std::abs(d);
                if (grad_a) grad_a->at(r, c, ch) = d > 0 ? inv : (d < 0 ? -inv : 0.0);
            }
        }
    }
    return sum * inv;
}

LossValue loss_canonical(const Image& render, const Image& gt, const LossWeights& w) {
    check_pair(render, gt, "loss");
    if (w.l1 < 0 || w.dssim < 0 || w.perceptual < 0 || w.lip < 0) throw DataError("loss weights must be non-negative");
    LossValue out;
    out.grad = Image(render.width, render.height);
    Image g;
    out.l1 = l1(render, gt, &g);
    for (std::size_t i = 0; i < g.data.size(); ++i) out.grad.data[i] += w.l1 * g.data[i];
    out.dssim = 1.0 - ssim(render, gt, &g);
    for (std::size_t i = 0; i < g.data.size(); ++i) out.grad.data[i] -= w.dssim * g.data[i];
    out.total = w.l1 * out.l1 + w.dssim * out.dssim;
    if (w.perceptual > 0) {
        if (!w.perceptual_term) throw DataError("perceptual weight is set but no perceptual term is plugged in");
        Image pg(render.width, render.height);
        out.perceptual = w.perceptual_term(render, gt, &pg);
        for (std::size_t i = 0; i < pg.data.size(); ++i) out.grad.data[i] += w.perceptual * pg.data[i];
        out.total += w.perceptual * out.perceptual;
    }
    return out;
}

LossValue loss_deform(const Image& render, const Image& gt, const data::LipBox& box, const LossWeights& w) {
    check_pair(render, gt, "loss");
    check_box(render, box);
    LossValue out = loss_canonical(render, gt, w);
    Image g(render.width, render.height);
    out.lip = l1(render, gt, box, &g);
    for (std::size_t i = 0; i < g.data.size(); ++i) out.grad.data[i] += w.lip * g.data[i];
    out.total += w.lip * out.lip;
    return out;
}

} // namespace gtalk::train
