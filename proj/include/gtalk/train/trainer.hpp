#pragma once

#include "gtalk/data/dataset.hpp"
#include "gtalk/model/canonical.hpp"
#include "gtalk/model/deform.hpp"
#include "gtalk/train/losses.hpp"
#include "gtalk/train/optim.hpp"
#include "gtalk/util/config.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

namespace gtalk::train {

struct TrainConfig {
    LossWeights weights;
    std::uint64_t iterations = 8000;
    double lr_triplane = 1.6e-3;
    double lr_triplane_final = 1.6e-4;
    double lr_other = 1e-4;
    double lr_other_final = 1e-5;
    std::uint64_t seed = 0;

    // Canonical-stage densification (iterations are 1-based, inclusive range).
    bool densify = true;
    std::uint64_t densify_from = 500;
    std::uint64_t densify_until = 4000;
    std::uint64_t densify_interval = 100;
    model::DensifyConfig densify_config;

    std::uint64_t checkpoint_interval = 1000;
    std::uint64_t probe_interval = 100;  // probe PSNR cadence in the CSV log, 0 = never
    // -1 picks the first test frame.
    int probe_frame = -1;

    model::CanonicalConfig canonical;
    model::DeformConfig deform;

    // Throws DataError for negative weights, zero iterations and the like.
    void validate() const;
    KeyValues to_key_values() const;
};

// Unknown keys throw DataError.
TrainConfig config_from_key_values(KeyValues kv, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});

enum class Stage { canonical, deform };
const char* stage_name(Stage s);

// Everything needed to continue training bit for bit.
struct Checkpoint {
    Stage stage = Stage::canonical;
    std::uint64_t iteration = 0;  // completed steps in this stage
    TrainConfig config;
    model::CanonicalModel canonical;
    std::optional<model::DeformModel> deform;
    Adam optimizer;
    // Densification statistics since the last densify call.
    std::vector<double> grad_accum;
    std::vector<std::uint32_t> grad_count;
};

// Binary: "GTCKPT\0\0", u32 version, then the fields above.
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct StepLog {
    std::uint64_t iteration = 0;  // 1-based
    double total = 0, l1 = 0, dssim = 0, lip = 0, perceptual = 0;
    double probe_psnr = std::numeric_limits<double>::quiet_NaN();
    std::size_t gaussians = 0;
    double seconds = 0;  // wall time since the trainer was created
};

// One stage of optimization over the training split. Frames are visited in a
// seeded shuffle per epoch that depends only on (seed, iteration), so resuming
// from a checkpoint replays the same order.
class Trainer {
public:
    // Canonical stage from the dataset's initialization points.
    static Trainer canonical(const data::Dataset& dataset, const TrainConfig& config);
    // Deformation stage warm-started from a canonical checkpoint, or jointly
    // from scratch when `warm_start` is null.
    static Trainer deform(const data::Dataset& dataset, const TrainConfig& config, const Checkpoint* warm_start);
    static Trainer resume(const data::Dataset& dataset, Checkpoint checkpoint);

    // One optimization step. Throws NumericError, leaving the state untouched,
    // when the loss or any gradient is not finite.
    StepLog step();
    bool done() const { return state_.iteration >= state_.config.iterations; }

    const Checkpoint& state() const { return state_; }
    const data::Dataset& dataset() const { return *dataset_; }
    std::size_t probe_index() const { return probe_; }

    // Render of any dataset frame with the current parameters.
    Image render_frame(std::size_t dataset_frame) const;
    double probe_psnr() const;

    // Dataset position of the frame used at a given 0-based iteration.
    std::size_t frame_for_iteration(std::uint64_t iteration) const;

    // Set to record, per parameter slot, the largest |gradient| seen.
    std::vector<double>* gradient_watch = nullptr;
    std::vector<std::string> slot_names() const;

private:
    Trainer(const data::Dataset& dataset, Checkpoint state);

    const data::Dataset* dataset_;
    Checkpoint state_;
    std::vector<std::size_t> train_positions_;
    std::size_t probe_ = 0;
    std::chrono::steady_clock::time_point start_;
};

// Drives a trainer to completion: <stage>_log.csv, <stage>.ckpt rewritten every
// checkpoint_interval steps, and an abort that names the last good checkpoint.
// Returns the final state.
struct RunOptions {
    std::filesystem::path out_dir;
    std::function<void(const StepLog&)> on_step;
    bool quiet = false;
};

Checkpoint run(Trainer& trainer, const RunOptions& options);

Checkpoint train_canonical(const data::Dataset& dataset, const TrainConfig& config, const RunOptions& options);
Checkpoint train_deform(const data::Dataset& dataset, const TrainConfig& config, const Checkpoint* warm_start,
                        const RunOptions& options);

// Deformed (or canonical, for a canonical-stage checkpoint) scene of one frame.
GaussianSet frame_scene(const Checkpoint& c, const model::ConditionFrame& frame);

} // namespace gtalk::train
