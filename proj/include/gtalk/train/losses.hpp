#pragma once

#include "gtalk/data/dataset.hpp"
#include "gtalk/io/image.hpp"

#include <functional>

namespace gtalk::train {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

// Mean SSIM over every fully contained 11x11 Gaussian window and channel.
// Images must be at least 11x11. `grad_a`, when given, receives dSSIM/da.
double ssim(const Image& a, const Image& b, Image* grad_a = nullptr);

// Mean absolute difference over all pixels and channels; optional d/da.
double l1(const Image& a, const Image& b, Image* grad_a = nullptr);
// Same, restricted to a pixel rectangle (mean over the crop, zero gradient outside).
double l1(const Image& a, const Image& b, const data::LipBox& box, Image* grad_a = nullptr);

// Optional extra image term: value, and accumulates its gradient into grad.
using PerceptualTerm = std::function<double(const Image& render, const Image& gt, Image* grad)>;

struct LossWeights {
    double l1 = 0.8;
    double dssim = 0.2;
    double perceptual = 0.0;
    double lip = 0.8;
    PerceptualTerm perceptual_term;  // required when perceptual > 0
};

struct LossValue {
    double total = 0.0;
    double l1 = 0.0;
    double dssim = 0.0;
    double perceptual = 0.0;
    double lip = 0.0;
    Image grad;  // d total / d render
};

LossValue loss_canonical(const Image& render, const Image& gt, const LossWeights& w);
// Adds the lip-crop L1. Throws DataError on an empty or out-of-image box.
LossValue loss_deform(const Image& render, const Image& gt, const data::LipBox& box, const LossWeights& w);

} // namespace gtalk::train
