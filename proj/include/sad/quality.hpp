#pragma once
#include "sad/types.hpp"

namespace sad {

// Mean squared error per sample (averaged over pixels and the three
// channels), values expected in [0,1].
double mse(const ImageBuffer& a, const ImageBuffer& b);

// Peak signal-to-noise ratio in dB against unit peak, capped at 99 so exact
// matches stay printable. psnr_from_loss converts a summed-channel loss
// (3x the per-sample MSE) without a second pass over the images.
double psnr(const ImageBuffer& a, const ImageBuffer& b);
double psnr_from_loss(double loss);

// Single-scale SSIM, 11x11 Gaussian window with sigma 1.5, K1=0.01,
// K2=0.03, unit dynamic range. Only fully interior windows contribute;
// channels are scored independently and averaged. Requires both dimensions
// to be at least 11.
double ssim(const ImageBuffer& a, const ImageBuffer& b);

} // namespace sad
