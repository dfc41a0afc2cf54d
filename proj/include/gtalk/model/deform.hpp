#pragma once

#include "gtalk/model/canonical.hpp"
#include "gtalk/scene/camera.hpp"

#include <array>
#include <vector>

namespace gtalk::model {

struct DeformConfig {
    std::size_t feature_dim = 128;  // triplane F
    std::size_t model_dim = 64;
    std::size_t heads = 4;
    std::size_t ffn_hidden = 128;
    std::size_t layers = 2;
    std::size_t audio_dim = 32;
    std::size_t eye_frequencies = 8;
    int sh_degree = 1;
};

enum Token { kAudioToken = 0, kEyeToken = 1, kViewToken = 2, kNullToken = 3 };
inline constexpr std::size_t kTokenCount = 4;
inline constexpr const char* kTokenNames[kTokenCount] = {"audio", "eye", "view", "null"};

struct ConditionFrame {
    std::vector<double> audio;
    double eye = 0.0;  // blink degree in [0, 1]
    Camera camera;
};

struct AttentionLayer {
    Linear q, k, v, o, ff1, ff2;
};

struct DeformModel {
    DeformConfig config;
    ParameterSet params;
    Linear z0, audio, eye, view1, view2;
    std::size_t null_token = 0;  // [1, d]
    std::vector<AttentionLayer> layers;
    Linear psi_mu, psi_r, psi_s, psi_sh, psi_alpha;
};

// Random projections and attention weights, zero offset heads.
DeformModel make_deform(const DeformConfig& config, std::uint64_t seed);

// sin/cos(2^k pi e) for k < frequencies, sines first.
std::vector<double> eye_encoding(double eye, std::size_t frequencies);

// [4, d] token matrix: audio, eye, view, null.
Var encode_conditions(const DeformModel& m, const std::vector<Var>& bound, const ConditionFrame& frame, diff::Tape& tape);
Array encode_conditions(const DeformModel& m, const ConditionFrame& frame);

struct Attended {
    Var z;
    // Per layer, [N, heads * T] softmax weights; head h occupies columns [h*T, (h+1)*T).
    std::vector<Var> scores;
};

// Per-Gaussian stream input: layer-normalized projection of f(mu).
Var embed_features(const DeformModel& m, const std::vector<Var>& bound, Var features);

// tokens may hold any number T >= 1 of rows.
Attended attend(const DeformModel& m, const std::vector<Var>& bound, Var z0, Var tokens);

struct OffsetVars {
    Var mu, r, s, sh, alpha;
};

OffsetVars predict_offsets(const DeformModel& m, const std::vector<Var>& bound, Var z);

struct DeformedVars {
    Var positions, rotations, log_scales, sh_coeffs, opacity_logits;
};

// Additive offsets; the rotation is renormalized after the addition.
DeformedVars deform(const CanonicalOutputs& can, const OffsetVars& off);

struct DeformationOffsets {
    Array mu, r, s, sh, alpha;
};

// Plain version on scenes. Throws NumericError if the result is not finite.
GaussianSet deform(const GaussianSet& canonical, const DeformationOffsets& off);

struct FrameGraph {
    CanonicalOutputs canonical;
    Var tokens;
    Var z0;
    Attended attended;
    OffsetVars offsets;
    DeformedVars deformed;
};

FrameGraph record_frame(const CanonicalModel& can, const CanonicalBinding& cb, const DeformModel& m,
                        const std::vector<Var>& bound, const ConditionFrame& frame);

GaussianSet to_gaussian_set(const DeformedVars& d, int sh_degree);

// Inference for one frame on a scratch tape.
struct FrameResult {
    GaussianSet deformed;
    DeformationOffsets offsets;
    std::vector<Array> scores;
};

FrameResult run_frame(const CanonicalModel& can, const DeformModel& m, const ConditionFrame& frame);

// Mean over heads of the weight on `token` at `layer`, one value per Gaussian.
std::vector<double> token_attention(const Array& layer_scores, std::size_t heads, std::size_t token);

// Per-Gaussian colors for render_colored: mean-over-heads weight of `token`
// mapped through a fixed dark-to-bright colormap. Throws on a bad token/layer.
Array attention_to_colors(const std::vector<Array>& scores, std::size_t layer, std::size_t token, std::size_t heads);

// Colormap on [0, 1] (clamped); luminance increases monotonically.
std::array<double, 3> colormap(double t);

} // namespace gtalk::model
