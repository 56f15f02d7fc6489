#ifndef DROPDEF_DENOISE_HPP
#define DROPDEF_DENOISE_HPP

#include "dropdef/audio.hpp"

namespace dropdef {

/// Per-bin magnitude estimate of stationary background noise.
struct NoiseProfile {
    Vector magnitude;  // N/2 + 1, non-negative
};

/// Magnitude spectral subtraction (Boll):
///   |S'| = max(|S| - oversubtraction * noise, floor * |S|), phase kept.
struct SpectralSubtractConfig {
    StftGeometry stft{};
    int leading_frames = 6;
    double oversubtraction = 1.0;
    double floor = 0.02;
};

/// Mean magnitude over the first `leading_frames` STFT frames.
NoiseProfile estimate_noise(const Waveform& x, int leading_frames, const StftGeometry& geometry = {});

Waveform spectral_subtract(const Waveform& x, const NoiseProfile& profile, double oversubtraction,
                           double floor, const StftGeometry& geometry = {});

/// d/dx of spectral_subtract for a fixed profile, given dL/d(output).
/// Subgradient: the branch active at the forward point is differentiated.
Vector spectral_subtract_backward(const Waveform& x, const NoiseProfile& profile, double oversubtraction,
                                  double floor, const Vector& grad_output, const StftGeometry& geometry = {});

/// Estimate-then-subtract, the denoiser placed in front of the recogniser.
/// The noise profile comes from the input itself.
Waveform denoise(const Waveform& x, const SpectralSubtractConfig& config = {});

/// Gradient of denoise, including the dependence of the noise estimate on x.
Vector denoise_backward(const Waveform& x, const Vector& grad_output, const SpectralSubtractConfig& config = {});

}  // namespace dropdef

#endif
