#include "gtalk/triplane/triplane.hpp"

#include "gtalk/io/image.hpp"
#include "gtalk/util/error.hpp"
#include "gtalk/util/log.hpp"
#include "gtalk/util/parallel.hpp"
#include "gtalk/util/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>

namespace gtalk::tri {

namespace {

constexpr int kAxes[3][2] = {{0, 1}, {1, 2}, {2, 0}};

struct Layout {
    const std::vector<int>& resolutions;
    int features;
    Eigen::Vector3d lower, upper;
    std::size_t levels() const { return resolutions.size(); }
    std::size_t feature_dim() const { return levels() * static_cast<std::size_t>(features); }
};

Layout layout_of(const TriplaneGrid& g) { return {g.resolutions, g.features, g.lower, g.upper}; }

void check_points(const Array& points) {
    if (points.rank() != 2 || points.dim(1) != 3)
        throw ShapeError("triplane query: points must be N x 3, got " + diff::shape_string(points.shape()));
    if (!points.all_finite()) throw NumericError("triplane query: non-finite point coordinates");
}

void check_planes(const Layout& lay, std::span<const Array* const> planes) {
    if (lay.levels() == 0) throw DataError("triplane has zero levels");
    if (planes.size() != lay.levels() * 3)
        throw ShapeError("triplane: expected " + std::to_string(lay.levels() * 3) + " planes, got " +
                         std::to_string(planes.size()));
    for (std::size_t l = 0; l < lay.levels(); ++l) {
        const std::size_t r = static_cast<std::size_t>(lay.resolutions[l]);
        for (int p = 0; p < 3; ++p) {
            const Array& a = *planes[l * 3 + p];
            if (a.rank() != 2 || a.dim(0) != r * r || a.dim(1) != static_cast<std::size_t>(lay.features))
                throw ShapeError("triplane level " + std::to_string(l) + " plane " + kPlaneNames[p] + " has shape " +
                                 diff::shape_string(a.shape()) + ", expected [" + std::to_string(r * r) + "," +
                                 std::to_string(lay.features) + "]");
        }
    }
}

Array query_impl(const Layout& lay, std::span<const Array* const> planes, const Array& points, QueryCache& cache) {
    check_planes(lay, planes);
    check_points(points);
    const std::size_t n = points.dim(0);
    const std::size_t levels = lay.levels();
    const std::size_t h = static_cast<std::size_t>(lay.features);
    Array out({n, lay.feature_dim()});
    cache.points = n;
    cache.samples.assign(n * levels * 3, {});
    cache.plane_values.assign(n * levels * 3 * h, 0.0);
    std::vector<std::uint8_t> clamped(n, 0);

    parallel_for(n, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t i = begin; i < end; ++i) {
            for (std::size_t l = 0; l < levels; ++l) {
                const int r = lay.resolutions[l];
                double coord[3];
                for (int a = 0; a < 3; ++a)
                    coord[a] = (points.at(i, a) - lay.lower[a]) * (r - 1) / (lay.upper[a] - lay.lower[a]);
                double* prod = out.data() + i * lay.feature_dim() + l * h;
                std::fill(prod, prod + h, 1.0);
                for (int p = 0; p < 3; ++p) {
                    QueryCache::Sample& s = cache.samples[(i * levels + l) * 3 + p];
                    double uv[2];
                    bool clamp_flag[2];
                    std::uint32_t base[2];
                    for (int k = 0; k < 2; ++k) {
                        double c = coord[kAxes[p][k]];
                        clamp_flag[k] = c < 0.0 || c > r - 1;
                        c = std::clamp(c, 0.0, static_cast<double>(r - 1));
                        base[k] = static_cast<std::uint32_t>(std::min(std::floor(c), static_cast<double>(r - 2)));
                        uv[k] = c - base[k];
                    }
                    s.u0 = base[0];
                    s.v0 = base[1];
                    s.fu = uv[0];
                    s.fv = uv[1];
                    s.clamped_u = clamp_flag[0];
                    s.clamped_v = clamp_flag[1];
                    if (clamp_flag[0] || clamp_flag[1]) clamped[i] = 1;
                    const Array& plane = *planes[l * 3 + p];
                    const double* t00 = plane.data() + (static_cast<std::size_t>(s.v0) * r + s.u0) * h;
                    const double* t01 = t00 + h;
                    const double* t10 = t00 + static_cast<std::size_t>(r) * h;
                    const double* t11 = t10 + h;
                    const double w00 = (1 - s.fu) * (1 - s.fv), w01 = s.fu * (1 - s.fv);
                    const double w10 = (1 - s.fu) * s.fv, w11 = s.fu * s.fv;
                    double* val = cache.plane_values.data() + ((i * levels + l) * 3 + p) * h;
                    for (std::size_t f = 0; f < h; ++f) {
                        val[f] = w00 * t00[f] + w01 * t01[f] + w10 * t10[f] + w11 * t11[f];
                        prod[f] *= val[f];
                    }
                }
            }
        }
    });
    cache.clamped_points = static_cast<std::size_t>(std::count(clamped.begin(), clamped.end(), 1));
    if (cache.clamped_points > 0)
        log::warn("triplane query: " + std::to_string(cache.clamped_points) + " point(s) outside the grid bounds were clamped");
    return out;
}

// Accumulates into the given arrays (null entries are skipped).
void backward_impl(const Layout& lay, std::span<const Array* const> planes, const QueryCache& cache,
                   const Array& grad_features, std::span<Array* const> plane_grads, Array* point_grad) {
    const std::size_t n = cache.points;
    const std::size_t levels = lay.levels();
    const std::size_t h = static_cast<std::size_t>(lay.features);
    if (cache.samples.size() != n * levels * 3 || cache.plane_values.size() != n * levels * 3 * h || n == 0)
        throw Error("triplane query_backward: missing saved interpolation weights");
    if (grad_features.rank() != 2 || grad_features.dim(0) != n || grad_features.dim(1) != lay.feature_dim())
        throw ShapeError("triplane query_backward: gradient shape " + diff::shape_string(grad_features.shape()) +
                         " does not match [" + std::to_string(n) + "," + std::to_string(lay.feature_dim()) + "]");

    // d(feature)/d(plane sample) is the product of the other two samples.
    auto plane_grad_vec = [&](std::size_t i, std::size_t l, int p, double* gp) {
        const double* g = grad_features.data() + i * lay.feature_dim() + l * h;
        const double* a = cache.plane_values.data() + ((i * levels + l) * 3 + (p + 1) % 3) * h;
        const double* b = cache.plane_values.data() + ((i * levels + l) * 3 + (p + 2) % 3) * h;
        for (std::size_t f = 0; f < h; ++f) gp[f] = g[f] * a[f] * b[f];
    };

    if (point_grad) {
        parallel_for(n, [&](std::size_t begin, std::size_t end, std::size_t) {
            std::vector<double> gp(h);
            for (std::size_t i = begin; i < end; ++i) {
                for (std::size_t l = 0; l < levels; ++l) {
                    const int r = lay.resolutions[l];
                    for (int p = 0; p < 3; ++p) {
                        const QueryCache::Sample& s = cache.samples[(i * levels + l) * 3 + p];
                        plane_grad_vec(i, l, p, gp.data());
                        const Array& plane = *planes[l * 3 + p];
                        const double* t00 = plane.data() + (static_cast<std::size_t>(s.v0) * r + s.u0) * h;
                        const double* t01 = t00 + h;
                        const double* t10 = t00 + static_cast<std::size_t>(r) * h;
                        const double* t11 = t10 + h;
                        double du = 0.0, dv = 0.0;
                        for (std::size_t f = 0; f < h; ++f) {
                            du += gp[f] * ((1 - s.fv) * (t01[f] - t00[f]) + s.fv * (t11[f] - t10[f]));
                            dv += gp[f] * ((1 - s.fu) * (t10[f] - t00[f]) + s.fu * (t11[f] - t01[f]));
                        }
                        const int au = kAxes[p][0], av = kAxes[p][1];
                        if (!s.clamped_u) point_grad->at(i, au) += du * (r - 1) / (lay.upper[au] - lay.lower[au]);
                        if (!s.clamped_v) point_grad->at(i, av) += dv * (r - 1) / (lay.upper[av] - lay.lower[av]);
                    }
                }
            }
        });
    }

    bool any_plane = false;
    for (Array* g : plane_grads) any_plane = any_plane || g != nullptr;
    if (!any_plane) return;
    // Texel scatter runs serially so the accumulation order is fixed.
    std::vector<double> gp(h);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t l = 0; l < levels; ++l) {
            const std::size_t r = static_cast<std::size_t>(lay.resolutions[l]);
            for (int p = 0; p < 3; ++p) {
                Array* target = plane_grads[l * 3 + p];
                if (!target) continue;
                const QueryCache::Sample& s = cache.samples[(i * levels + l) * 3 + p];
                plane_grad_vec(i, l, p, gp.data());
                double* t00 = target->data() + (static_cast<std::size_t>(s.v0) * r + s.u0) * h;
                double* t01 = t00 + h;
                double* t10 = t00 + r * h;
                double* t11 = t10 + h;
                const double w00 = (1 - s.fu) * (1 - s.fv), w01 = s.fu * (1 - s.fv);
                const double w10 = (1 - s.fu) * s.fv, w11 = s.fu * s.fv;
                for (std::size_t f = 0; f < h; ++f) {
                    t00[f] += w00 * gp[f];
                    t01[f] += w01 * gp[f];
                    t10[f] += w10 * gp[f];
                    t11[f] += w11 * gp[f];
                }
            }
        }
    }
}

std::vector<const Array*> plane_ptrs(const TriplaneGrid& g) {
    std::vector<const Array*> out;
    for (const auto& p : g.planes) out.push_back(&p);
    return out;
}

} // namespace

std::size_t TriplaneGrid::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : planes) n += p.size();
    return n;
}

void TriplaneGrid::validate() const {
    const auto ptrs = plane_ptrs(*this);
    check_planes(layout_of(*this), ptrs);
    if (features <= 0) throw DataError("triplane feature dimension must be positive");
    for (int r : resolutions)
        if (r < 2) throw DataError("triplane resolution must be at least 2, got " + std::to_string(r));
    for (int a = 0; a < 3; ++a)
        if (!(upper[a] > lower[a])) throw DataError("triplane bounds are empty along axis " + std::to_string(a));
}

TriplaneGrid make_grid(const TriplaneConfig& config, std::uint64_t seed) {
    if (config.resolutions.empty()) throw DataError("triplane has zero levels");
    TriplaneGrid g;
    g.resolutions = config.resolutions;
    g.features = config.features;
    g.lower = config.lower;
    g.upper = config.upper;
    Rng rng(derive_seed(seed, 0x7472690aULL));
    for (int r : g.resolutions) {
        for (int p = 0; p < 3; ++p) {
            Array a({static_cast<std::size_t>(r) * r, static_cast<std::size_t>(g.features)});
            for (double& v : a.values()) v = rng.uniform(-config.init_range, config.init_range);
            g.planes.push_back(std::move(a));
        }
    }
    g.validate();
    return g;
}

Array query(const TriplaneGrid& grid, const Array& points, QueryCache* cache) {
    QueryCache local;
    return query_impl(layout_of(grid), plane_ptrs(grid), points, cache ? *cache : local);
}

QueryGradients query_backward(const TriplaneGrid& grid, const QueryCache& cache, const Array& grad_features,
                              bool point_gradients) {
    QueryGradients out;
    std::vector<Array*> targets;
    for (const auto& p : grid.planes) out.planes.push_back(Array::zeros_like(p));
    for (auto& p : out.planes) targets.push_back(&p);
    if (point_gradients) out.points = Array({cache.points == 0 ? 1 : cache.points, 3});
    backward_impl(layout_of(grid), plane_ptrs(grid), cache, grad_features, targets,
                  point_gradients ? &out.points : nullptr);
    return out;
}

diff::Var query(const TriplaneGrid& grid, diff::Var points, std::span<const diff::Var> planes) {
    diff::Tape* tape = points.tape();
    if (!tape) throw Error("triplane query: points var is not on a tape");
    std::vector<const Array*> values;
    for (const auto& v : planes) values.push_back(&v.value());
    auto cache = std::make_shared<QueryCache>();
    Array out = query_impl(layout_of(grid), values, points.value(), *cache);
    std::vector<diff::Var> inputs{points};
    inputs.insert(inputs.end(), planes.begin(), planes.end());
    const TriplaneGrid* g = &grid;
    return tape->record("triplane_query", std::move(inputs), std::move(out), [g, cache](const diff::BackwardContext& ctx) {
        backward_impl(layout_of(*g), ctx.inputs.subspan(1), *cache, ctx.grad_output, ctx.input_grads.subspan(1),
                      ctx.input_grads[0]);
    });
}

std::vector<double> pca_plane_image(const Array& plane, int resolution) {
    const std::size_t texels = static_cast<std::size_t>(resolution) * resolution;
    if (plane.rank() != 2 || plane.dim(0) != texels)
        throw ShapeError("pca_plane_image: plane shape " + diff::shape_string(plane.shape()) + " does not match R = " +
                         std::to_string(resolution));
    const Eigen::Index h = static_cast<Eigen::Index>(plane.dim(1));
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
        plane.data(), static_cast<Eigen::Index>(texels), h);
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(texels);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    const int comps = static_cast<int>(std::min<Eigen::Index>(3, h));
    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(h, 3);
    for (int c = 0; c < comps; ++c) {
        Eigen::VectorXd v = eig.eigenvectors().col(h - 1 - c);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0) v = -v;
        basis.col(c) = v;
    }
    const Eigen::MatrixXd proj = centered * basis;
    std::vector<double> img(texels * 3, 0.5);
    const double scale_ref = std::max(1.0, centered.cwiseAbs().maxCoeff());
    for (int c = 0; c < 3; ++c) {
        const double lo = proj.col(c).minCoeff(), hi = proj.col(c).maxCoeff();
        if (!(hi - lo > 1e-12 * scale_ref)) continue;
        for (std::size_t t = 0; t < texels; ++t) img[t * 3 + c] = (proj(static_cast<Eigen::Index>(t), c) - lo) / (hi - lo);
    }
    return img;
}

std::vector<std::filesystem::path> export_pca_images(const TriplaneGrid& grid, const std::filesystem::path& out_dir) {
    grid.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir))
        throw Error("cannot create output directory " + out_dir.string() + (ec ? ": " + ec.message() : ""));
    std::vector<std::filesystem::path> written;
    for (std::size_t l = 0; l < grid.levels(); ++l) {
        const int r = grid.resolutions[l];
        for (int p = 0; p < 3; ++p) {
            Image img(r, r);
            img.data = pca_plane_image(grid.planes[l * 3 + p], r);
            auto path = out_dir / ("level" + std::to_string(l) + "_" + kPlaneNames[p] + ".png");
            write_png(path, img);
            written.push_back(path);
        }
    }
    return written;
}

} // namespace gtalk::tri
