#pragma once

#include "gtalk/model/params.hpp"
#include "gtalk/scene/gaussian_set.hpp"
#include "gtalk/triplane/triplane.hpp"

#include <cstdint>
#include <vector>

namespace gtalk::model {

struct CanonicalConfig {
    int sh_degree = 1;
    tri::TriplaneConfig triplane;
    std::size_t hidden = 64;
    std::size_t cap = kDefaultGaussianCap;
};

// Canonical head: trainable positions, a triplane feature field, a shared MLP
// and one linear head per attribute.
struct CanonicalModel {
    CanonicalConfig config;
    Array positions;  // N x 3
    tri::TriplaneGrid grid;
    ParameterSet params;
    Linear shared1, shared2, head_r, head_s, head_sh, head_alpha;

    std::size_t size() const { return positions.empty() ? 0 : positions.dim(0); }
};

// Random shared MLP and small random heads. Bias init: rotation head (1, 0, 0, 0),
// scale head log of the mean nearest-neighbor spacing of `positions`, others 0.
CanonicalModel make_canonical(const CanonicalConfig& config, Array positions, std::uint64_t seed);

// Mean distance from each point to its nearest other point.
double mean_nearest_spacing(const Array& positions);

// Tape leaves of every trainable piece of the model.
struct CanonicalBinding {
    Var positions;
    std::vector<Var> planes;
    std::vector<Var> params;
};

CanonicalBinding bind(diff::Tape& tape, const CanonicalModel& model, bool trainable = true);

// Recorded canonical attributes. `features` is f(mu) from the triplane.
struct CanonicalOutputs {
    Var features;
    Var positions;
    Var rotations;  // normalized rows
    Var log_scales;
    Var sh_coeffs;
    Var opacity_logits;
};

CanonicalOutputs record_canonical(const CanonicalModel& model, const CanonicalBinding& b);

GaussianSet to_gaussian_set(const CanonicalOutputs& out, int sh_degree);

// G_can as a plain scene (records on a scratch tape).
GaussianSet assemble_canonical(const CanonicalModel& model);

struct DensifyConfig {
    double grad_threshold = 5e-3;
    double min_opacity = 0.005;
    // Gaussians whose largest scale exceeds this are split, others cloned.
    double split_scale = 0.01;
    double split_shrink = 0.8;
    std::size_t cap = kDefaultGaussianCap;
};

struct DensifyResult {
    std::size_t cloned = 0;
    std::size_t split = 0;
    std::size_t pruned = 0;
    // For every row of the new positions: the old row it came from, or -1 for a
    // freshly created position.
    std::vector<std::int64_t> source;
};

// Clone/split on positions only (attributes follow through the heads), then
// prune by opacity. `mean_grad_norms` holds the per-Gaussian mean position
// gradient norm since the previous call.
DensifyResult densify_and_prune(CanonicalModel& model, const std::vector<double>& mean_grad_norms,
                                const DensifyConfig& config, std::uint64_t seed);

} // namespace gtalk::model
