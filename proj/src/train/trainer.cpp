#include "gtalk/train/trainer.hpp"

#include "gtalk/eval/metrics.hpp"
#include "gtalk/io/binary.hpp"
#include "gtalk/raster/rasterizer.hpp"
#include "gtalk/util/error.hpp"
#include "gtalk/util/log.hpp"
#include "gtalk/util/rng.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace gtalk::train {

using diff::Var;

namespace {

std::string num(double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string join(const Eigen::Vector3d& v) { return num(v[0]) + "," + num(v[1]) + "," + num(v[2]); }

void read_vec3(KeyValues& kv, const std::string& key, Eigen::Vector3d& out) {
    std::vector<double> v;
    kv.read(key, v);
    if (v.empty()) return;
    if (v.size() != 3) throw DataError("key '" + key + "' expects three comma-separated numbers");
    out = {v[0], v[1], v[2]};
}

} // namespace

void TrainConfig::validate() const {
    if (weights.l1 < 0 || weights.dssim < 0 || weights.perceptual < 0 || weights.lip < 0)
        throw DataError("loss weights must be non-negative");
    if (iterations == 0) throw DataError("iterations must be positive");
    if (!(lr_triplane > 0 && lr_triplane_final > 0 && lr_other > 0 && lr_other_final > 0))
        throw DataError("learning rates must be positive");
    if (densify && densify_interval == 0) throw DataError("densify_interval must be positive");
    if (canonical.cap == 0) throw DataError("gaussian cap must be positive");
    if (canonical.triplane.resolutions.empty()) throw DataError("triplane needs at least one resolution");
    for (int r : canonical.triplane.resolutions)
        if (r < 2) throw DataError("triplane resolutions must be at least 2");
}

KeyValues TrainConfig::to_key_values() const {
    KeyValues kv;
    kv.set("l1", num(weights.l1));
    kv.set("dssim", num(weights.dssim));
    kv.set("perceptual", num(weights.perceptual));
    kv.set("lip", num(weights.lip));
    kv.set("iterations", std::to_string(iterations));
    kv.set("lr_triplane", num(lr_triplane));
    kv.set("lr_triplane_final", num(lr_triplane_final));
    kv.set("lr_other", num(lr_other));
    kv.set("lr_other_final", num(lr_other_final));
    kv.set("seed", std::to_string(seed));
    kv.set("densify", densify ? "true" : "false");
    kv.set("densify_from", std::to_string(densify_from));
    kv.set("densify_until", std::to_string(densify_until));
    kv.set("densify_interval", std::to_string(densify_interval));
    kv.set("grad_threshold", num(densify_config.grad_threshold));
    kv.set("min_opacity", num(densify_config.min_opacity));
    kv.set("split_scale", num(densify_config.split_scale));
    kv.set("split_shrink", num(densify_config.split_shrink));
    kv.set("cap", std::to_string(canonical.cap));
    kv.set("checkpoint_interval", std::to_string(checkpoint_interval));
    kv.set("probe_interval", std::to_string(probe_interval));
    kv.set("probe_frame", std::to_string(probe_frame));
    kv.set("sh_degree", std::to_string(canonical.sh_degree));
    kv.set("triplane_resolutions", join(canonical.triplane.resolutions));
    kv.set("triplane_features", std::to_string(canonical.triplane.features));
    kv.set("triplane_init", num(canonical.triplane.init_range));
    kv.set("triplane_lower", join(canonical.triplane.lower));
    kv.set("triplane_upper", join(canonical.triplane.upper));
    kv.set("hidden", std::to_string(canonical.hidden));
    kv.set("model_dim", std::to_string(deform.model_dim));
    kv.set("heads", std::to_string(deform.heads));
    kv.set("ffn_hidden", std::to_string(deform.ffn_hidden));
    kv.set("layers", std::to_string(deform.layers));
    kv.set("audio_dim", std::to_string(deform.audio_dim));
    kv.set("eye_frequencies", std::to_string(deform.eye_frequencies));
    return kv;
}

TrainConfig config_from_key_values(KeyValues kv, TrainConfig c) {
    kv.read("l1", c.weights.l1);
    kv.read("dssim", c.weights.dssim);
    kv.read("perceptual", c.weights.perceptual);
    kv.read("lip", c.weights.lip);
    kv.read("iterations", c.iterations);
    kv.read("lr_triplane", c.lr_triplane);
    kv.read("lr_triplane_final", c.lr_triplane_final);
    kv.read("lr_other", c.lr_other);
    kv.read("lr_other_final", c.lr_other_final);
    kv.read("seed", c.seed);
    kv.read("densify", c.densify);
    kv.read("densify_from", c.densify_from);
    kv.read("densify_until", c.densify_until);
    kv.read("densify_interval", c.densify_interval);
    kv.read("grad_threshold", c.densify_config.grad_threshold);
    kv.read("min_opacity", c.densify_config.min_opacity);
    kv.read("split_scale", c.densify_config.split_scale);
    kv.read("split_shrink", c.densify_config.split_shrink);
    kv.read("cap", c.canonical.cap);
    kv.read("checkpoint_interval", c.checkpoint_interval);
    kv.read("probe_interval", c.probe_interval);
    kv.read("probe_frame", c.probe_frame);
    kv.read("sh_degree", c.canonical.sh_degree);
    kv.read("triplane_resolutions", c.canonical.triplane.resolutions);
    std::uint64_t features = c.canonical.triplane.features;
    kv.read("triplane_features", features);
    c.canonical.triplane.features = static_cast<int>(features);
    kv.read("triplane_init", c.canonical.triplane.init_range);
    read_vec3(kv, "triplane_lower", c.canonical.triplane.lower);
    read_vec3(kv, "triplane_upper", c.canonical.triplane.upper);
    kv.read("hidden", c.canonical.hidden);
    kv.read("model_dim", c.deform.model_dim);
    kv.read("heads", c.deform.heads);
    kv.read("ffn_hidden", c.deform.ffn_hidden);
    kv.read("layers", c.deform.layers);
    kv.read("audio_dim", c.deform.audio_dim);
    kv.read("eye_frequencies", c.deform.eye_frequencies);
    kv.check_all_used();
    c.densify_config.cap = c.canonical.cap;
    c.deform.sh_degree = c.canonical.sh_degree;
    c.validate();
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base) {
    return config_from_key_values(KeyValues::load(path), std::move(base));
}

const char* stage_name(Stage s) { return s == Stage::canonical ? "canonical" : "deform"; }

// ---------------------------------------------------------------------------
// Checkpoint file

namespace {

constexpr char kMagic[8] = {'G', 'T', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr std::uint32_t kVersion = 1;

void write_array(std::ostream& os, const diff::Array& a) {
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(a.rank()));
    for (auto d : a.shape()) io::write_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
}

diff::Array read_array(std::istream& is, const std::string& what) {
    const auto rank = io::read_pod<std::uint32_t>(is, what);
    if (rank == 0) return {};
    if (rank > 8) throw FormatError("implausible rank while reading " + what);
    diff::Shape shape(rank);
    std::size_t total = 1;
    for (auto& d : shape) {
        d = io::read_pod<std::uint64_t>(is, what);
        if (d == 0 || d > (1ull << 32)) throw FormatError("bad dimension while reading " + what);
        total *= d;
        if (total > (1ull << 31)) throw FormatError("array too large while reading " + what);
    }
    diff::Array a(shape);
    io::read_into(is, a.data(), a.size(), what);
    return a;
}

void write_params(std::ostream& os, const model::ParameterSet& p) {
    io::write_pod<std::uint64_t>(os, p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        io::write_string(os, p.name(i));
        write_array(os, p[i]);
    }
}

void read_params(std::istream& is, model::ParameterSet& p, const std::string& what) {
    const auto n = io::read_pod<std::uint64_t>(is, what);
    if (n != p.size())
        throw FormatError(what + ": checkpoint has " + std::to_string(n) + " parameters, the configured model has " +
                          std::to_string(p.size()));
    for (std::size_t i = 0; i < n; ++i) {
        const auto name = io::read_string(is, what);
        if (name != p.name(i)) throw FormatError(what + ": expected parameter '" + p.name(i) + "', found '" + name + "'");
        auto a = read_array(is, what + " " + name);
        if (a.shape() != p[i].shape())
            throw FormatError(what + ": parameter '" + name + "' has shape " + diff::shape_string(a.shape()) +
                              ", expected " + diff::shape_string(p[i].shape()));
        p[i] = std::move(a);
    }
}

} // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw Error("cannot write checkpoint " + path.string());
        os.write(kMagic, sizeof kMagic);
        io::write_pod(os, kVersion);
        io::write_pod<std::uint32_t>(os, c.stage == Stage::canonical ? 0 : 1);
        io::write_pod<std::uint64_t>(os, c.iteration);
        io::write_string(os, c.config.to_key_values().to_string());

        write_array(os, c.canonical.positions);
        io::write_pod<std::uint64_t>(os, c.canonical.grid.planes.size());
        for (const auto& p : c.canonical.grid.planes) write_array(os, p);
        write_params(os, c.canonical.params);

        io::write_pod<std::uint8_t>(os, c.deform ? 1 : 0);
        if (c.deform) write_params(os, c.deform->params);

        const auto& ac = c.optimizer.config();
        io::write_pod(os, ac.beta1);
        io::write_pod(os, ac.beta2);
        io::write_pod(os, ac.eps);
        io::write_pod<std::uint64_t>(os, c.optimizer.steps());
        io::write_pod<std::uint64_t>(os, c.optimizer.moments().size());
        for (const auto& m : c.optimizer.moments()) {
            write_array(os, m.m);
            write_array(os, m.v);
        }

        io::write_pod<std::uint64_t>(os, c.grad_accum.size());
        os.write(reinterpret_cast<const char*>(c.grad_accum.data()),
                 static_cast<std::streamsize>(c.grad_accum.size() * sizeof(double)));
        io::write_pod<std::uint64_t>(os, c.grad_count.size());
        os.write(reinterpret_cast<const char*>(c.grad_count.data()),
                 static_cast<std::streamsize>(c.grad_count.size() * sizeof(std::uint32_t)));
        if (!os) throw Error("error while writing checkpoint " + path.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint " + path.string());
    const std::string what = "checkpoint " + path.string();
    char magic[8];
    if (!is.read(magic, sizeof magic) || !std::equal(magic, magic + 8, kMagic))
        throw FormatError(path.string() + " is not a checkpoint");
    const auto version = io::read_pod<std::uint32_t>(is, what);
    if (version != kVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));

    Checkpoint c;
    const auto stage = io::read_pod<std::uint32_t>(is, what);
    if (stage > 1) throw FormatError(what + ": unknown stage");
    c.stage = stage == 0 ? Stage::canonical : Stage::deform;
    c.iteration = io::read_pod<std::uint64_t>(is, what);
    c.config = config_from_key_values(KeyValues::parse(io::read_string(is, what), what));

    auto positions = read_array(is, what + " positions");
    if (positions.rank() != 2 || positions.dim(1) != 3) throw FormatError(what + ": positions must be N x 3");
    c.canonical = model::make_canonical(c.config.canonical, positions, 0);
    const auto planes = io::read_pod<std::uint64_t>(is, what);
    if (planes != c.canonical.grid.planes.size()) throw FormatError(what + ": triplane plane count mismatch");
    for (auto& p : c.canonical.grid.planes) {
        auto a = read_array(is, what + " triplane");
        if (a.shape() != p.shape()) throw FormatError(what + ": triplane plane shape mismatch");
        p = std::move(a);
    }
    read_params(is, c.canonical.params, what);

    c.config.deform.feature_dim = c.canonical.grid.feature_dim();
    if (io::read_pod<std::uint8_t>(is, what)) {
        c.deform = model::make_deform(c.config.deform, 0);
        read_params(is, c.deform->params, what);
    }

    AdamConfig ac;
    ac.beta1 = io::read_pod<double>(is, what);
    ac.beta2 = io::read_pod<double>(is, what);
    ac.eps = io::read_pod<double>(is, what);
    c.optimizer = Adam(ac);
    c.optimizer.set_steps(io::read_pod<std::uint64_t>(is, what));
    const auto slots = io::read_pod<std::uint64_t>(is, what);
    if (slots > 100000) throw FormatError(what + ": implausible optimizer slot count");
    c.optimizer.moments().resize(slots);
    for (auto& m : c.optimizer.moments()) {
        m.m = read_array(is, what + " moments");
        m.v = read_array(is, what + " moments");
    }

    const auto na = io::read_pod<std::uint64_t>(is, what);
    if (na > (1u << 30)) throw FormatError(what + ": implausible accumulator size");
    c.grad_accum.resize(na);
    io::read_into(is, c.grad_accum.data(), na, what);
    const auto nc = io::read_pod<std::uint64_t>(is, what);
    if (nc > (1u << 30)) throw FormatError(what + ": implausible accumulator size");
    c.grad_count.resize(nc);
    io::read_into(is, c.grad_count.data(), nc, what);
    if (is.peek() != std::char_traits<char>::eof()) throw FormatError(what + ": trailing bytes");
    return c;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

diff::Array dataset_points(const data::Dataset& ds) {
    const auto pts = read_point_file(ds.manifest.points_path());
    if (pts.empty()) throw DataError("no initialization points in " + ds.manifest.points_path().string());
    diff::Array a({pts.size(), 3});
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (int c = 0; c < 3; ++c) a.at(i, c) = pts[i][c];
    return a;
}

TrainConfig fit_to_dataset(TrainConfig c, const data::Dataset& ds) {
    c.deform.audio_dim = ds.manifest.audio_dim;
    c.deform.sh_degree = c.canonical.sh_degree;
    c.densify_config.cap = c.canonical.cap;
    c.validate();
    return c;
}

Var dot_const(Var v, const diff::Array& g) { return diff::reduce_sum(v * v.tape()->constant(g)); }

bool finite(const diff::Array& a) { return a.all_finite(); }

} // namespace

Trainer::Trainer(const data::Dataset& dataset, Checkpoint state)
    : dataset_(&dataset), state_(std::move(state)), start_(std::chrono::steady_clock::now()) {
    if (dataset.frames.empty()) throw DataError("training dataset has no frames");
    for (std::size_t i = 0; i < dataset.frames.size(); ++i)
        if (!data::is_test_index(dataset.frames[i].index)) train_positions_.push_back(i);
    if (train_positions_.empty()) throw DataError("training dataset has no training frames");
    probe_ = train_positions_.front();
    bool found = false;
    for (std::size_t i = 0; i < dataset.frames.size() && !found; ++i) {
        const auto idx = dataset.frames[i].index;
        if (state_.config.probe_frame < 0 ? data::is_test_index(idx) : idx == static_cast<std::size_t>(state_.config.probe_frame)) {
            probe_ = i;
            found = true;
        }
    }
    if (!found && state_.config.probe_frame >= 0)
        throw DataError("probe frame " + std::to_string(state_.config.probe_frame) + " is not in the dataset");
}

Trainer Trainer::canonical(const data::Dataset& dataset, const TrainConfig& config) {
    Checkpoint c;
    c.stage = Stage::canonical;
    c.config = fit_to_dataset(config, dataset);
    c.canonical = model::make_canonical(c.config.canonical, dataset_points(dataset), derive_seed(config.seed, 1));
    c.grad_accum.assign(c.canonical.size(), 0.0);
    c.grad_count.assign(c.canonical.size(), 0);
    return Trainer(dataset, std::move(c));
}

Trainer Trainer::deform(const data::Dataset& dataset, const TrainConfig& config, const Checkpoint* warm_start) {
    Checkpoint c;
    c.stage = Stage::deform;
    c.config = fit_to_dataset(config, dataset);
    if (warm_start) {
        if (warm_start->stage != Stage::canonical) throw DataError("deformation stage must start from a canonical checkpoint");
        c.canonical = warm_start->canonical;
        c.config.canonical = warm_start->config.canonical;
        c.config.deform.sh_degree = c.config.canonical.sh_degree;
    } else {
        c.canonical = model::make_canonical(c.config.canonical, dataset_points(dataset), derive_seed(config.seed, 1));
    }
    c.config.deform.feature_dim = c.canonical.grid.feature_dim();
    c.deform = model::make_deform(c.config.deform, derive_seed(config.seed, 2));
    return Trainer(dataset, std::move(c));
}

Trainer Trainer::resume(const data::Dataset& dataset, Checkpoint checkpoint) {
    if (checkpoint.config.deform.audio_dim != dataset.manifest.audio_dim && checkpoint.deform)
        throw DataError("checkpoint audio dimension does not match the dataset");
    return Trainer(dataset, std::move(checkpoint));
}

std::size_t Trainer::frame_for_iteration(std::uint64_t iteration) const {
    const std::size_t n = train_positions_.size();
    const std::uint64_t epoch = iteration / n;
    std::vector<std::size_t> order = train_positions_;
    Rng rng(derive_seed(state_.config.seed, 0x6f72646572ull + epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    return order[iteration % n];
}

std::vector<std::string> Trainer::slot_names() const {
    std::vector<std::string> names{"positions"};
    for (std::size_t i = 0; i < state_.canonical.grid.planes.size(); ++i) names.push_back("triplane." + std::to_string(i));
    for (std::size_t i = 0; i < state_.canonical.params.size(); ++i) names.push_back(state_.canonical.params.name(i));
    if (state_.deform)
        for (std::size_t i = 0; i < state_.deform->params.size(); ++i) names.push_back("deform." + state_.deform->params.name(i));
    return names;
}

StepLog Trainer::step() {
    if (done()) throw Error("training already finished");
    Checkpoint& st = state_;
    const TrainConfig& cfg = st.config;
    const std::uint64_t it = st.iteration;
    const data::Frame& frame = dataset_->frames[frame_for_iteration(it)];
    const Image gt = from_8bit(frame.image), bg = from_8bit(frame.background);
    const Camera& cam = frame.condition.camera;

    diff::Tape tape;
    const auto cb = model::bind(tape, st.canonical);
    std::vector<Var> deform_bound;
    std::array<Var, 5> attrs;
    if (st.stage == Stage::canonical) {
        const auto out = model::record_canonical(st.canonical, cb);
        attrs = {out.positions, out.rotations, out.log_scales, out.sh_coeffs, out.opacity_logits};
    } else {
        deform_bound = st.deform->params.bind(tape);
        const auto g = model::record_frame(st.canonical, cb, *st.deform, deform_bound, frame.condition);
        attrs = {g.deformed.positions, g.deformed.rotations, g.deformed.log_scales, g.deformed.sh_coeffs,
                 g.deformed.opacity_logits};
    }
    GaussianSet set;
    set.sh_degree = cfg.canonical.sh_degree;
    set.positions = attrs[0].value();
    set.rotations = attrs[1].value();
    set.log_scales = attrs[2].value();
    set.sh_coeffs = attrs[3].value();
    set.opacity_logits = attrs[4].value();

    const auto proj = raster::project(set, cam);
    const auto rendered = raster::render_tiled(proj, bg, {.keep_records = true});
    const LossValue loss = st.stage == Stage::canonical ? loss_canonical(rendered.image, gt, cfg.weights)
                                                        : loss_deform(rendered.image, gt, frame.lip, cfg.weights);
    if (!std::isfinite(loss.total))
        throw NumericError("non-finite loss at " + std::string(stage_name(st.stage)) + " iteration " +
                           std::to_string(it + 1) + " (frame " + std::to_string(frame.index) + ")");
    const auto sg = raster::render_backward(rendered, loss.grad, proj, set, cam);
    const Var surrogate = dot_const(attrs[0], sg.positions) + dot_const(attrs[1], sg.rotations) +
                          dot_const(attrs[2], sg.log_scales) + dot_const(attrs[3], sg.sh_coeffs) +
                          dot_const(attrs[4], sg.opacity_logits);
    diff::Gradients grads = tape.backward(surrogate, diff::Array::scalar(1.0));

    std::vector<Var> leaves{cb.positions};
    leaves.insert(leaves.end(), cb.planes.begin(), cb.planes.end());
    leaves.insert(leaves.end(), cb.params.begin(), cb.params.end());
    leaves.insert(leaves.end(), deform_bound.begin(), deform_bound.end());
    for (std::size_t s = 0; s < leaves.size(); ++s)
        if (!finite(grads[leaves[s]]))
            throw NumericError("non-finite gradient for " + slot_names()[s] + " at iteration " + std::to_string(it + 1));

    if (gradient_watch) {
        gradient_watch->resize(leaves.size(), 0.0);
        for (std::size_t s = 0; s < leaves.size(); ++s)
            for (double g : grads[leaves[s]].values()) (*gradient_watch)[s] = std::max((*gradient_watch)[s], std::abs(g));
    }

    if (st.stage == Stage::canonical) {
        const auto& gp = sg.positions;
        for (std::size_t i = 0; i < st.canonical.size(); ++i) {
            const double n = std::sqrt(gp.at(i, 0) * gp.at(i, 0) + gp.at(i, 1) * gp.at(i, 1) + gp.at(i, 2) * gp.at(i, 2));
            if (n > 0) {
                st.grad_accum[i] += n;
                ++st.grad_count[i];
            }
        }
    }

    const double t = static_cast<double>(it) / static_cast<double>(cfg.iterations);
    const double lr_tri = exponential_lr(cfg.lr_triplane, cfg.lr_triplane_final, t);
    const double lr_other = exponential_lr(cfg.lr_other, cfg.lr_other_final, t);
    st.optimizer.begin_step();
    std::size_t slot = 0;
    st.optimizer.update(slot++, st.canonical.positions, grads.take(cb.positions), lr_other);
    for (std::size_t p = 0; p < cb.planes.size(); ++p)
        st.optimizer.update(slot++, st.canonical.grid.planes[p], grads.take(cb.planes[p]), lr_tri);
    for (std::size_t p = 0; p < cb.params.size(); ++p)
        st.optimizer.update(slot++, st.canonical.params[p], grads.take(cb.params[p]), lr_other);
    for (std::size_t p = 0; p < deform_bound.size(); ++p)
        st.optimizer.update(slot++, st.deform->params[p], grads.take(deform_bound[p]), lr_other);
    st.iteration = it + 1;

    if (st.stage == Stage::canonical && cfg.densify && st.iteration >= cfg.densify_from &&
        st.iteration <= cfg.densify_until && st.iteration % cfg.densify_interval == 0) {
        std::vector<double> mean(st.canonical.size(), 0.0);
        for (std::size_t i = 0; i < mean.size(); ++i)
            if (st.grad_count[i]) mean[i] = st.grad_accum[i] / st.grad_count[i];
        const auto res = model::densify_and_prune(st.canonical, mean, cfg.densify_config,
                                                  derive_seed(cfg.seed, 0x64656e0000ull + st.iteration));
        st.optimizer.remap_rows(0, res.source, 3);
        st.grad_accum.assign(st.canonical.size(), 0.0);
        st.grad_count.assign(st.canonical.size(), 0);
        if (res.cloned + res.split + res.pruned)
            log::debug("densify at " + std::to_string(st.iteration) + ": cloned " + std::to_string(res.cloned) +
                       ", split " + std::to_string(res.split) + ", pruned " + std::to_string(res.pruned) + ", now " +
                       std::to_string(st.canonical.size()));
    }

    StepLog log;
    log.iteration = st.iteration;
    log.total = loss.total;
    log.l1 = loss.l1;
    log.dssim = loss.dssim;
    log.lip = loss.lip;
    log.perceptual = loss.perceptual;
    log.gaussians = st.canonical.size();
    if (cfg.probe_interval && st.iteration % cfg.probe_interval == 0) log.probe_psnr = probe_psnr();
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return log;
}

GaussianSet frame_scene(const Checkpoint& c, const model::ConditionFrame& frame) {
    if (c.deform) return model::run_frame(c.canonical, *c.deform, frame).deformed;
    return model::assemble_canonical(c.canonical);
}

Image Trainer::render_frame(std::size_t dataset_frame) const {
    const data::Frame& f = dataset_->frames.at(dataset_frame);
    return raster::render(frame_scene(state_, f.condition), f.condition.camera, from_8bit(f.background));
}

double Trainer::probe_psnr() const {
    return eval::psnr(render_frame(probe_), from_8bit(dataset_->frames[probe_].image));
}

// ---------------------------------------------------------------------------
// Driver

Checkpoint run(Trainer& trainer, const RunOptions& options) {
    const auto& st = trainer.state();
    const std::string stage = stage_name(st.stage);
    std::filesystem::path ckpt, log_path;
    std::ofstream csv;
    if (!options.out_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(options.out_dir, ec);
        if (ec) throw Error("cannot create output directory " + options.out_dir.string() + ": " + ec.message());
        ckpt = options.out_dir / (stage + ".ckpt");
        log_path = options.out_dir / (stage + "_log.csv");
        const bool append = st.iteration > 0 && std::filesystem::exists(log_path);
        csv.open(log_path, append ? std::ios::app : std::ios::trunc);
        if (!csv) throw Error("cannot write training log " + log_path.string());
        if (!append) csv << "iteration,total,l1,dssim,lip,perceptual,probe_psnr,gaussians,wall_seconds\n";
        save_checkpoint(st, ckpt);
    }
    std::uint64_t last_good = st.iteration;
    while (!trainer.done()) {
        StepLog s;
        try {
            s = trainer.step();
        } catch (const NumericError& e) {
            std::string msg = std::string(e.what()) + "; training aborted";
            if (!ckpt.empty()) msg += ", last good checkpoint " + ckpt.string() + " (iteration " + std::to_string(last_good) + ")";
            log::error(msg);
            throw NumericError(msg);
        }
        if (csv.is_open()) {
            char line[256];
            std::snprintf(line, sizeof line, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,", static_cast<unsigned long long>(s.iteration),
                          s.total, s.l1, s.dssim, s.lip, s.perceptual);
            csv << line;
            if (!std::isnan(s.probe_psnr)) {
                std::snprintf(line, sizeof line, "%.6f", s.probe_psnr);
                csv << line;
            }
            std::snprintf(line, sizeof line, ",%zu,%.3f\n", s.gaussians, s.seconds);
            csv << line;
        }
        if (options.on_step) options.on_step(s);
        if (!options.quiet && (s.iteration % 100 == 0 || trainer.done())) {
            char line[160];
            std::snprintf(line, sizeof line, "%s %llu/%llu loss %.5f%s gaussians %zu (%.1f s)", stage.c_str(),
                          static_cast<unsigned long long>(s.iteration), static_cast<unsigned long long>(st.config.iterations),
                          s.total, std::isnan(s.probe_psnr) ? "" : (" probe " + std::to_string(s.probe_psnr).substr(0, 6) + " dB").c_str(),
                          s.gaussians, s.seconds);
            log::info(line);
        }
        if (!ckpt.empty() && st.config.checkpoint_interval && s.iteration % st.config.checkpoint_interval == 0) {
            csv.flush();
            save_checkpoint(st, ckpt);
            last_good = s.iteration;
        }
    }
    if (!ckpt.empty()) save_checkpoint(st, ckpt);
    return st;
}

Checkpoint train_canonical(const data::Dataset& dataset, const TrainConfig& config, const RunOptions& options) {
    auto t = Trainer::canonical(dataset, config);
    return run(t, options);
}

Checkpoint train_deform(const data::Dataset& dataset, const TrainConfig& config, const Checkpoint* warm_start,
                        const RunOptions& options) {
    auto t = Trainer::deform(dataset, config, warm_start);
    return run(t, options);
}

} // namespace gtalk::train
