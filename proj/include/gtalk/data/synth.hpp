#pragma once

#include "gtalk/data/dataset.hpp"
#include "gtalk/scene/gaussian_set.hpp"

namespace gtalk::data {

struct SynthScenario {
    std::string name = "dynamic";
    bool dynamic = true;  // false: zero audio, eyes open, nothing moves
    std::size_t frames = 550;
    int width = 256, height = 256;
    double focal = 300.0;
    std::size_t audio_dim = 32;
    std::size_t head_gaussians = 500;
    std::size_t lip_gaussians = 20;     // per lip; the mouth also has an inner cluster of this size
    std::size_t eye_gaussians = 20;     // per eye
    double distance = 1.6;
    double yaw = 0.35;                  // orbit amplitude, radians
    double pitch = 0.12;
    double mouth_open = 0.06;           // lower-lip travel at full openness
    double point_jitter = 0.01;
    std::uint64_t seed = 7;
};

SynthScenario default_scenario();
SynthScenario static_scenario();

// Ground-truth template in its rest pose plus the cluster memberships.
struct SynthTemplate {
    GaussianSet rest;
    std::vector<std::uint32_t> upper_lip, lower_lip, inner_mouth, eyes;
    std::vector<std::uint32_t> mouth() const;  // union of the three mouth clusters, sorted
};

SynthTemplate build_template(const SynthScenario& s);

// Per-frame tracks.
std::vector<std::vector<double>> audio_track(const SynthScenario& s);
std::vector<double> eye_track(const SynthScenario& s);
// Norm of the constant-norm part of every audio vector.
double audio_reference_norm(const SynthScenario& s);
// Mouth openness in [0, 1]: affine in |a| above the reference norm, scaled by
// `scale` (the track maximum for generated data); 0 for zero audio.
double mouth_openness(const std::vector<double>& audio, double reference_norm, double scale);

// Template posed for one frame: lower lip moves by openness * mouth_open, the
// upper lip by a quarter of that upward, the inner mouth fades in, eyes fade with e.
GaussianSet pose_template(const SynthTemplate& t, const SynthScenario& s, double openness, double eye);

Camera frame_camera(const SynthScenario& s, std::size_t frame);

// Ground-truth image of one frame, identical to the file generate() writes.
Image8 render_frame(const SynthScenario& s, std::size_t frame);

// Renders every frame with the reference compositor and writes
// manifest.txt, frames/*.png, background.png, points.txt and template.scene.
DatasetManifest generate(const SynthScenario& s, const std::filesystem::path& out_dir);

// Scenario as key=value lines (same format as training configs).
SynthScenario scenario_from_config(const std::filesystem::path& path, SynthScenario base);

} // namespace gtalk::data
