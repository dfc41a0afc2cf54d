#pragma once

#include "gtalk/diffmath/array.hpp"

#include <cstdint>
#include <vector>

namespace gtalk::train {

using diff::Array;

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
    friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

// Adam over a fixed list of parameter slots. Moments are allocated on first use.
class Adam {
public:
    Adam() = default;
    explicit Adam(AdamConfig config) : config_(config) {}

    // Starts a new step; bias correction uses the step count.
    void begin_step() { ++steps_; }
    void update(std::size_t slot, Array& param, const Array& grad, double lr);

    // Rebuilds the row-major moments of a slot whose rows were reordered;
    // source[i] is the old row of new row i, or -1 for zeroed moments.
    void remap_rows(std::size_t slot, const std::vector<std::int64_t>& source, std::size_t row_width);

    std::uint64_t steps() const { return steps_; }
    const AdamConfig& config() const { return config_; }

    struct Moments {
        Array m, v;
        friend bool operator==(const Moments&, const Moments&) = default;
    };
    std::vector<Moments>& moments() { return moments_; }
    const std::vector<Moments>& moments() const { return moments_; }
    void set_steps(std::uint64_t s) { steps_ = s; }

    friend bool operator==(const Adam&, const Adam&) = default;

private:
    AdamConfig config_;
    std::uint64_t steps_ = 0;
    std::vector<Moments> moments_;
};

// Exponential interpolation from `initial` at t = 0 to `final` at t >= 1.
double exponential_lr(double initial, double final, double t);

} // namespace gtalk::train
