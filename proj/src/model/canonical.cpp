#include "gtalk/model/canonical.hpp"

#include "gtalk/util/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gtalk::model {

double mean_nearest_spacing(const Array& positions) {
    const std::size_t n = positions.dim(0);
    if (n < 2) return 0.01;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return positions.at(a, 0) < positions.at(b, 0) || (positions.at(a, 0) == positions.at(b, 0) && a < b);
    });
    auto dist2 = [&](std::size_t a, std::size_t b) {
        double s = 0;
        for (int c = 0; c < 3; ++c) {
            const double d = positions.at(a, c) - positions.at(b, c);
            s += d * d;
        }
        return s;
    };
    double total = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = order[k];
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = k + 1; j < n; ++j) {
            const double dx = positions.at(order[j], 0) - positions.at(i, 0);
            if (dx * dx >= best) break;
            best = std::min(best, dist2(i, order[j]));
        }
        for (std::size_t j = k; j-- > 0;) {
            const double dx = positions.at(i, 0) - positions.at(order[j], 0);
            if (dx * dx >= best) break;
            best = std::min(best, dist2(i, order[j]));
        }
        total += std::sqrt(best);
    }
    return std::max(total / static_cast<double>(n), 1e-6);
}

CanonicalModel make_canonical(const CanonicalConfig& config, Array positions, std::uint64_t seed) {
    if (positions.rank() != 2 || positions.dim(1) != 3 || positions.dim(0) == 0)
        throw ShapeError("canonical positions must be N x 3 with N > 0, got " + diff::shape_string(positions.shape()));
    if (positions.dim(0) > config.cap)
        throw DataError("canonical model has " + std::to_string(positions.dim(0)) + " Gaussians, cap is " +
                        std::to_string(config.cap));
    CanonicalModel m;
    m.config = config;
    m.grid = tri::make_grid(config.triplane, seed);
    Rng rng(derive_seed(seed, 0x63616eULL));
    const std::size_t f = m.grid.feature_dim(), h = config.hidden;
    m.shared1 = add_linear(m.params, "shared.0", f, h, rng);
    m.shared2 = add_linear(m.params, "shared.1", h, h, rng);
    m.head_r = add_linear(m.params, "head_r", h, 4, rng, Init::small);
    m.head_s = add_linear(m.params, "head_s", h, 3, rng, Init::small);
    m.head_sh = add_linear(m.params, "head_sh", h, 3 * sh_coeff_count(config.sh_degree), rng, Init::small);
    m.head_alpha = add_linear(m.params, "head_alpha", h, 1, rng, Init::small);
    m.params[m.head_r.bias].at(0, 0) = 1.0;
    m.params[m.head_s.bias].fill(std::log(mean_nearest_spacing(positions)));
    m.positions = std::move(positions);
    return m;
}

CanonicalBinding bind(diff::Tape& tape, const CanonicalModel& model, bool trainable) {
    CanonicalBinding b;
    b.positions = tape.leaf_ref(model.positions, trainable);
    for (const auto& p : model.grid.planes) b.planes.push_back(tape.leaf_ref(p, trainable));
    b.params = model.params.bind(tape, trainable);
    return b;
}

CanonicalOutputs record_canonical(const CanonicalModel& model, const CanonicalBinding& b) {
    CanonicalOutputs out;
    out.positions = b.positions;
    out.features = tri::query(model.grid, b.positions, b.planes);
    Var k = diff::relu(apply(model.shared1, b.params, out.features));
    k = diff::relu(apply(model.shared2, b.params, k));
    out.rotations = diff::normalize_rows(apply(model.head_r, b.params, k));
    out.log_scales = apply(model.head_s, b.params, k);
    out.sh_coeffs = apply(model.head_sh, b.params, k);
    out.opacity_logits = apply(model.head_alpha, b.params, k);
    return out;
}

GaussianSet to_gaussian_set(const CanonicalOutputs& out, int sh_degree) {
    GaussianSet s;
    s.sh_degree = sh_degree;
    s.positions = out.positions.value();
    s.rotations = out.rotations.value();
    s.log_scales = out.log_scales.value();
    s.sh_coeffs = out.sh_coeffs.value();
    s.opacity_logits = out.opacity_logits.value();
    return s;
}

GaussianSet assemble_canonical(const CanonicalModel& model) {
    diff::Tape tape;
    auto b = bind(tape, model, false);
    return to_gaussian_set(record_canonical(model, b), model.config.sh_degree);
}

DensifyResult densify_and_prune(CanonicalModel& model, const std::vector<double>& mean_grad_norms,
                                const DensifyConfig& config, std::uint64_t seed) {
    const std::size_t n = model.size();
    if (mean_grad_norms.size() != n)
        throw ShapeError("densify: " + std::to_string(mean_grad_norms.size()) + " gradient norms for " +
                         std::to_string(n) + " Gaussians");
    const GaussianSet set = assemble_canonical(model);
    Rng rng(seed);
    DensifyResult res;

    // Candidates by decreasing gradient, ties by index; stop at the cap.
    std::vector<std::size_t> cand;
    for (std::size_t i = 0; i < n; ++i)
        if (mean_grad_norms[i] > config.grad_threshold) cand.push_back(i);
    std::stable_sort(cand.begin(), cand.end(),
                     [&](std::size_t a, std::size_t b) { return mean_grad_norms[a] > mean_grad_norms[b]; });
    const std::size_t room = config.cap > n ? config.cap - n : 0;
    if (cand.size() > room) cand.resize(room);
    std::vector<char> is_split(n, 0), chosen(n, 0);
    for (std::size_t i : cand) chosen[i] = 1;

    std::vector<std::array<double, 3>> rows;
    std::vector<std::int64_t> source;
    std::vector<std::array<double, 3>> extra;
    std::vector<std::int64_t> extra_source;
    auto sample_offset = [&](std::size_t i, double factor) {
        const Eigen::Vector4d q(set.rotations.at(i, 0), set.rotations.at(i, 1), set.rotations.at(i, 2),
                                set.rotations.at(i, 3));
        const Eigen::Matrix3d r = rotation_from_quaternion(q / q.norm());
        Eigen::Vector3d z(rng.normal(), rng.normal(), rng.normal());
        for (int c = 0; c < 3; ++c) z[c] *= std::exp(set.log_scales.at(i, c)) * factor;
        return Eigen::Vector3d(r * z);
    };
    for (std::size_t i = 0; i < n; ++i) {
        std::array<double, 3> p{model.positions.at(i, 0), model.positions.at(i, 1), model.positions.at(i, 2)};
        if (!chosen[i]) {
            rows.push_back(p);
            source.push_back(static_cast<std::int64_t>(i));
            continue;
        }
        const double max_scale =
            std::exp(std::max({set.log_scales.at(i, 0), set.log_scales.at(i, 1), set.log_scales.at(i, 2)}));
        if (max_scale > config.split_scale) {
            // Two children drawn around the parent replace it.
            ++res.split;
            for (int child = 0; child < 2; ++child) {
                const Eigen::Vector3d d = sample_offset(i, config.split_shrink);
                std::array<double, 3> c{p[0] + d[0], p[1] + d[1], p[2] + d[2]};
                if (child == 0) {
                    rows.push_back(c);
                    source.push_back(-1);
                } else {
                    extra.push_back(c);
                    extra_source.push_back(-1);
                }
            }
        } else {
            ++res.cloned;
            const Eigen::Vector3d d = sample_offset(i, 0.1);
            rows.push_back(p);
            source.push_back(static_cast<std::int64_t>(i));
            extra.push_back({p[0] + d[0], p[1] + d[1], p[2] + d[2]});
            extra_source.push_back(-1);
        }
    }

    // Prune surviving originals by opacity; new rows are always kept.
    std::vector<std::array<double, 3>> kept;
    std::vector<std::int64_t> kept_source;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (source[k] >= 0) {
            const double logit = set.opacity_logits.at(static_cast<std::size_t>(source[k]), 0);
            if (1.0 / (1.0 + std::exp(-logit)) < config.min_opacity) {
                ++res.pruned;
                continue;
            }
        }
        kept.push_back(rows[k]);
        kept_source.push_back(source[k]);
    }
    for (std::size_t k = 0; k < extra.size(); ++k) {
        kept.push_back(extra[k]);
        kept_source.push_back(extra_source[k]);
    }
    if (kept.empty()) {
        // Never prune to an empty model: keep the most opaque Gaussian.
        std::size_t best = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (set.opacity_logits.at(i, 0) > set.opacity_logits.at(best, 0)) best = i;
        kept.push_back({model.positions.at(best, 0), model.positions.at(best, 1), model.positions.at(best, 2)});
        kept_source.push_back(static_cast<std::int64_t>(best));
        --res.pruned;
    }
    Array next({kept.size(), 3});
    for (std::size_t k = 0; k < kept.size(); ++k)
        for (int c = 0; c < 3; ++c) next.at(k, c) = kept[k][c];
    model.positions = std::move(next);
    res.source = std::move(kept_source);
    return res;
}

} // namespace gtalk::model
