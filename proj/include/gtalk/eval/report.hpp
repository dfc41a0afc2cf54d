#pragma once

#include "gtalk/data/dataset.hpp"
#include "gtalk/train/trainer.hpp"

#include <filesystem>
#include <vector>

namespace gtalk::eval {

struct FrameMetrics {
    std::size_t index = 0;
    bool test = false;
    double psnr = 0;
    double ssim = 0;
};

// Mean token attention over groups of model Gaussians.
struct TokenAttention {
    std::size_t token = 0;
    std::size_t layer = 0;  // SIZE_MAX for the mean over all layers
    double mouth = 0, non_mouth = 0;
    double eye = 0, non_eye = 0;
    double mouth_ratio() const { return mouth / non_mouth; }
    double eye_ratio() const { return eye / non_eye; }
};

struct ReportSummary {
    std::vector<FrameMetrics> frames;
    double test_psnr = 0, test_ssim = 0;
    double train_psnr = 0, train_ssim = 0;
    std::vector<TokenAttention> attention;  // empty for canonical-only checkpoints

    const TokenAttention& attention_of(std::size_t token) const;  // mean over layers
};

struct ReportOptions {
    data::Split split = data::Split::test;  // frames rendered and scored
    std::size_t attention_frames = 3;        // frames with token maps
    bool write_renders = true;
    bool write_triplane = true;
};

// Group membership of model Gaussians: each model Gaussian takes the group of
// its nearest initialization point (the dataset point file lists GT ids in order).
struct GaussianGroups {
    std::vector<bool> mouth, eye;
};
GaussianGroups assign_groups(const diff::Array& positions, const data::DatasetManifest& manifest);

// Scores the split; token attention is averaged over the scored frames.
ReportSummary evaluate(const train::Checkpoint& checkpoint, const data::Dataset& dataset,
                       const ReportOptions& options = {});

// Individual artifacts. Renders and maps are named frame_XXXX by dataset index;
// attention maps use the last layer over the first `frames` frames of the split.
void write_renders(const train::Checkpoint& checkpoint, const data::Dataset& dataset, data::Split split,
                   const std::filesystem::path& dir);
void write_attention_maps(const train::Checkpoint& checkpoint, const data::Dataset& dataset, data::Split split,
                          std::size_t frames, const std::filesystem::path& dir);
void write_triplane_images(const tri::TriplaneGrid& grid, const std::filesystem::path& dir);

// Writes renders/, attention/, triplane/, metrics.csv, attention.csv and
// summary.txt into out_dir. Output is a pure function of its inputs.
ReportSummary render_report(const train::Checkpoint& checkpoint, const data::Dataset& dataset,
                            const std::filesystem::path& out_dir, const ReportOptions& options = {});

} // namespace gtalk::eval
