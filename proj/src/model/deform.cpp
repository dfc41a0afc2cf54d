#include "gtalk/model/deform.hpp"

#include "gtalk/util/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace gtalk::model {

using namespace diff;

DeformModel make_deform(const DeformConfig& config, std::uint64_t seed) {
    if (config.heads == 0 || config.model_dim % config.heads != 0)
        throw DataError("model dim " + std::to_string(config.model_dim) + " is not divisible by " +
                        std::to_string(config.heads) + " heads");
    if (config.layers == 0) throw DataError("attention stack needs at least one layer");
    DeformModel m;
    m.config = config;
    Rng rng(derive_seed(seed, 0x646566ULL));
    const std::size_t d = config.model_dim;
    m.z0 = add_linear(m.params, "z0", config.feature_dim, d, rng);
    m.audio = add_linear(m.params, "token.audio", config.audio_dim, d, rng);
    m.eye = add_linear(m.params, "token.eye", 2 * config.eye_frequencies, d, rng);
    m.view1 = add_linear(m.params, "token.view.0", 12, d, rng);
    m.view2 = add_linear(m.params, "token.view.1", d, d, rng);
    Array null_token({1, d});
    for (double& v : null_token.values()) v = rng.uniform(-0.1, 0.1);
    m.null_token = m.params.add("token.null", std::move(null_token));
    for (std::size_t l = 0; l < config.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        AttentionLayer a;
        a.q = add_linear(m.params, p + "q", d, d, rng);
        a.k = add_linear(m.params, p + "k", d, d, rng);
        a.v = add_linear(m.params, p + "v", d, d, rng);
        a.o = add_linear(m.params, p + "o", d, d, rng);
        a.ff1 = add_linear(m.params, p + "ff1", d, config.ffn_hidden, rng);
        a.ff2 = add_linear(m.params, p + "ff2", config.ffn_hidden, d, rng);
        m.layers.push_back(a);
    }
    const std::size_t nsh = 3 * sh_coeff_count(config.sh_degree);
    m.psi_mu = add_linear(m.params, "psi_mu", d, 3, rng, Init::zero);
    m.psi_r = add_linear(m.params, "psi_r", d, 4, rng, Init::zero);
    m.psi_s = add_linear(m.params, "psi_s", d, 3, rng, Init::zero);
    m.psi_sh = add_linear(m.params, "psi_sh", d, nsh, rng, Init::zero);
    m.psi_alpha = add_linear(m.params, "psi_alpha", d, 1, rng, Init::zero);
    return m;
}

std::vector<double> eye_encoding(double eye, std::size_t frequencies) {
    std::vector<double> enc(2 * frequencies);
    for (std::size_t k = 0; k < frequencies; ++k) {
        const double arg = std::ldexp(1.0, static_cast<int>(k)) * std::numbers::pi * eye;
        enc[k] = std::sin(arg);
        enc[frequencies + k] = std::cos(arg);
    }
    return enc;
}

Var encode_conditions(const DeformModel& m, const std::vector<Var>& bound, const ConditionFrame& frame, Tape& tape) {
    const auto& cfg = m.config;
    if (frame.audio.size() != cfg.audio_dim)
        throw ShapeError("audio feature has " + std::to_string(frame.audio.size()) + " values, model expects " +
                         std::to_string(cfg.audio_dim));
    for (double v : frame.audio)
        if (!std::isfinite(v)) throw NumericError("audio feature contains a non-finite value");
    if (!std::isfinite(frame.eye) || frame.eye < 0.0 || frame.eye > 1.0)
        throw DataError("eye value " + std::to_string(frame.eye) + " is outside [0, 1]");

    Var audio = apply(m.audio, bound, tape.constant(Array({1, cfg.audio_dim}, frame.audio)));
    Var eye = apply(m.eye, bound, tape.constant(Array({1, 2 * cfg.eye_frequencies}, eye_encoding(frame.eye, cfg.eye_frequencies))));
    Array pose({1, 12});
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) pose.at(0, r * 4 + c) = frame.camera.world_to_camera(r, c);
    Var view = apply(m.view2, bound, relu(apply(m.view1, bound, tape.constant(std::move(pose)))));
    const Var parts[kTokenCount] = {audio, eye, view, bound.at(m.null_token)};
    return concat(parts, 0);
}

Array encode_conditions(const DeformModel& m, const ConditionFrame& frame) {
    Tape tape;
    auto bound = m.params.bind(tape, false);
    return encode_conditions(m, bound, frame, tape).value();
}

Var embed_features(const DeformModel& m, const std::vector<Var>& bound, Var features) {
    return layer_norm(apply(m.z0, bound, features));
}

Attended attend(const DeformModel& m, const std::vector<Var>& bound, Var z0, Var tokens) {
    const std::size_t d = m.config.model_dim, heads = m.config.heads, dk = d / heads;
    if (z0.shape().size() != 2 || z0.shape()[1] != d)
        throw ShapeError("attend: z0 must be [N," + std::to_string(d) + "], got " + shape_string(z0.shape()));
    if (tokens.shape().size() != 2 || tokens.shape()[1] != d)
        throw ShapeError("attend: tokens must be [T," + std::to_string(d) + "], got " + shape_string(tokens.shape()));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
    Attended out;
    Var z = z0;
    const Var context = layer_norm(tokens);
    for (const auto& layer : m.layers) {
        Var q = apply(layer.q, bound, layer_norm(z));
        Var k = apply(layer.k, bound, context);
        Var v = apply(layer.v, bound, context);
        std::vector<Var> head_out, head_scores;
        for (std::size_t h = 0; h < heads; ++h) {
            Var qh = slice(q, 1, h * dk, (h + 1) * dk);
            Var kh = slice(k, 1, h * dk, (h + 1) * dk);
            Var vh = slice(v, 1, h * dk, (h + 1) * dk);
            Var a = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt));
            head_scores.push_back(a);
            head_out.push_back(matmul(a, vh));
        }
        out.scores.push_back(concat(head_scores, 1));
        z = z + apply(layer.o, bound, concat(head_out, 1));
        z = z + apply(layer.ff2, bound, relu(apply(layer.ff1, bound, layer_norm(z))));
    }
    out.z = z;
    return out;
}

OffsetVars predict_offsets(const DeformModel& m, const std::vector<Var>& bound, Var z) {
    return {apply(m.psi_mu, bound, z), apply(m.psi_r, bound, z), apply(m.psi_s, bound, z), apply(m.psi_sh, bound, z),
            apply(m.psi_alpha, bound, z)};
}

DeformedVars deform(const CanonicalOutputs& can, const OffsetVars& off) {
    return {can.positions + off.mu, normalize_rows(can.rotations + off.r), can.log_scales + off.s,
            can.sh_coeffs + off.sh, can.opacity_logits + off.alpha};
}

GaussianSet deform(const GaussianSet& canonical, const DeformationOffsets& off) {
    auto check = [](const Array& a, const Array& b, const char* what) {
        if (a.shape() != b.shape())
            throw ShapeError(std::string("deform: ") + what + " offset shape " + shape_string(b.shape()) +
                             " does not match " + shape_string(a.shape()));
    };
    check(canonical.positions, off.mu, "position");
    check(canonical.rotations, off.r, "rotation");
    check(canonical.log_scales, off.s, "scale");
    check(canonical.sh_coeffs, off.sh, "SH");
    check(canonical.opacity_logits, off.alpha, "opacity");
    GaussianSet out = canonical;
    out.positions += off.mu;
    out.rotations += off.r;
    out.log_scales += off.s;
    out.sh_coeffs += off.sh;
    out.opacity_logits += off.alpha;
    for (std::size_t i = 0; i < out.size(); ++i) {
        double len = 0.0;
        for (int c = 0; c < 4; ++c) len += out.rotations.at(i, c) * out.rotations.at(i, c);
        len = std::sqrt(len);
        if (!(len > 0.0)) throw NumericError("deform: rotation offset cancels quaternion " + std::to_string(i));
        for (int c = 0; c < 4; ++c) out.rotations.at(i, c) /= len;
    }
    for (const Array* a : {&out.positions, &out.rotations, &out.log_scales, &out.sh_coeffs, &out.opacity_logits})
        if (!a->all_finite()) throw NumericError("deform: result is not finite");
    return out;
}

FrameGraph record_frame(const CanonicalModel& can, const CanonicalBinding& cb, const DeformModel& m,
                        const std::vector<Var>& bound, const ConditionFrame& frame) {
    FrameGraph g;
    g.canonical = record_canonical(can, cb);
    g.tokens = encode_conditions(m, bound, frame, *cb.positions.tape());
    g.z0 = embed_features(m, bound, g.canonical.features);
    g.attended = attend(m, bound, g.z0, g.tokens);
    g.offsets = predict_offsets(m, bound, g.attended.z);
    g.deformed = deform(g.canonical, g.offsets);
    return g;
}

GaussianSet to_gaussian_set(const DeformedVars& d, int sh_degree) {
    GaussianSet s;
    s.sh_degree = sh_degree;
    s.positions = d.positions.value();
    s.rotations = d.rotations.value();
    s.log_scales = d.log_scales.value();
    s.sh_coeffs = d.sh_coeffs.value();
    s.opacity_logits = d.opacity_logits.value();
    return s;
}

FrameResult run_frame(const CanonicalModel& can, const DeformModel& m, const ConditionFrame& frame) {
    Tape tape;
    auto cb = bind(tape, can, false);
    auto bound = m.params.bind(tape, false);
    auto g = record_frame(can, cb, m, bound, frame);
    FrameResult r;
    r.deformed = to_gaussian_set(g.deformed, can.config.sh_degree);
    r.offsets = {g.offsets.mu.value(), g.offsets.r.value(), g.offsets.s.value(), g.offsets.sh.value(),
                 g.offsets.alpha.value()};
    for (const auto& s : g.attended.scores) r.scores.push_back(s.value());
    return r;
}

std::vector<double> token_attention(const Array& layer_scores, std::size_t heads, std::size_t token) {
    if (heads == 0 || layer_scores.rank() != 2 || layer_scores.dim(1) % heads != 0)
        throw ShapeError("token_attention: scores shape " + shape_string(layer_scores.shape()) + " is not [N, heads*T]");
    const std::size_t t = layer_scores.dim(1) / heads;
    if (token >= t) throw DataError("token index " + std::to_string(token) + " out of range (" + std::to_string(t) + " tokens)");
    std::vector<double> out(layer_scores.dim(0), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t h = 0; h < heads; ++h) out[i] += layer_scores.at(i, h * t + token);
        out[i] /= static_cast<double>(heads);
    }
    return out;
}

std::array<double, 3> colormap(double t) {
    static constexpr double stops[5][3] = {
        {0.0, 0.0, 0.02}, {0.3, 0.05, 0.45}, {0.75, 0.2, 0.35}, {0.98, 0.55, 0.1}, {1.0, 1.0, 0.75}};
    t = std::clamp(t, 0.0, 1.0) * 4.0;
    const int i = std::min(3, static_cast<int>(t));
    const double f = t - i;
    return {stops[i][0] + f * (stops[i + 1][0] - stops[i][0]), stops[i][1] + f * (stops[i + 1][1] - stops[i][1]),
            stops[i][2] + f * (stops[i + 1][2] - stops[i][2])};
}

Array attention_to_colors(const std::vector<Array>& scores, std::size_t layer, std::size_t token, std::size_t heads) {
    if (layer >= scores.size())
        throw DataError("attention layer " + std::to_string(layer) + " out of range (" + std::to_string(scores.size()) + " layers)");
    const auto values = token_attention(scores[layer], heads, token);
    Array colors({values.size(), 3});
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto c = colormap(values[i]);
        for (int k = 0; k < 3; ++k) colors.at(i, k) = c[k];
    }
    return colors;
}

} // namespace gtalk::model
