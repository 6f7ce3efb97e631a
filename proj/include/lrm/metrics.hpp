#pragma once

#include "lrm/image.hpp"

namespace lrm {

// Evaluation-only metrics over [0,1] images; never on the autodiff tape.

// 10*log10(1/mse), capped at 99 dB when mse < 1e-10.
double psnr(const ImageF& a, const ImageF& b);

// Standard single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01,
// K2=0.03, dynamic range 1, valid-region average, channel mean. Needs
// images of at least 11x11.
double ssim(const ImageF& a, const ImageF& b);

}  // namespace lrm
