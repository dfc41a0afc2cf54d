#pragma once

#include "gtalk/io/image.hpp"

namespace gtalk::eval {

// Reported for identical images instead of +inf.
inline constexpr double kPsnrCap = 100.0;

// 10 log10(1 / MSE) over all pixels and channels, capped at kPsnrCap.
double psnr(const Image& a, const Image& b);
double mse(const Image& a, const Image& b);
// Windowed SSIM, the same one the training loss uses.
double ssim(const Image& a, const Image& b);

} // namespace gtalk::eval
