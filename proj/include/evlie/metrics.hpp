#pragma once

#include "evlie/image.hpp"

namespace evlie {

// Peak signal-to-noise ratio in dB for [0,1] images; identical images
// report the 99.0 cap.
double psnr(const Image& a, const Image& b);

// Mean SSIM over an 11x11 Gaussian window (sigma 1.5, K1=0.01,
// K2=0.03, dynamic range 1), valid positions only, averaged across
// channels. Needs min(H, W) >= 11.
double ssim(const Image& a, const Image& b);

} // namespace evlie
