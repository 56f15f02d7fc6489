#ifndef DROPDEF_MASKING_HPP
#define DROPDEF_MASKING_HPP

#include "dropdef/audio.hpp"

#include <iosfwd>

namespace dropdef {

/// Simplified MPEG-1 psychoacoustic model 1, as used by masking-based audio
/// attacks. All levels are dB with a full-scale reference: a PSD bin of
/// |S_k|^2 * (8/3) / N^2 = 1 sits at `full_scale_db`.
struct MaskingConfig {
    double full_scale_db = 96.0;
    double psd_floor_db = -200.0;
    double tonal_margin_db = 7.0;      // masker must exceed its neighbourhood by this much
    double hearing_offset_db = -12.0;  // shift applied to the absolute threshold of hearing
    double combine_exponent = 0.3;     // power-law addition of masker thresholds and the ATH
};

/// Framewise dB-scale power spectra, frames x (N/2 + 1).
struct PsdEstimate {
    Matrix db;
};

struct MaskingThreshold {
    Matrix db;
};

double bark(double hz);

/// Absolute threshold of hearing in dB for frequency `hz` (clamped to >= 20 Hz).
double hearing_threshold_db(double hz, const MaskingConfig& config = {});

/// ATH for every bin of an N-point STFT at `sample_rate`.
Vector hearing_threshold_curve(int sample_rate, int window_size, const MaskingConfig& config = {});

PsdEstimate psd(const Waveform& x, const StftGeometry& geometry = {}, const MaskingConfig& config = {});

/// dL/dx given dL/dpsd. Floored bins pass zero gradient.
Vector psd_backward(const Waveform& x, const Matrix& grad_psd, const StftGeometry& geometry = {},
                    const MaskingConfig& config = {});

/// Global masking threshold of one frame's PSD (dB per bin).
Vector frame_masking_threshold(const Vector& psd_db, const Vector& barks, const Vector& ath,
                               const MaskingConfig& config = {});

MaskingThreshold masking_threshold(const Waveform& x, const StftGeometry& geometry = {},
                                   const MaskingConfig& config = {});

/// (1/frames) * sum over frames and bins of max(p - theta, 0).
double masking_penalty(const PsdEstimate& p, const MaskingThreshold& theta);

/// d penalty / d p (subgradient 0 at the kink).
Matrix masking_penalty_grad(const PsdEstimate& p, const MaskingThreshold& theta);

/// Long-format CSV `frame,bin,value_db` of a PSD or threshold matrix.
void write_db_csv(std::ostream& out, const Matrix& db);

}  // namespace dropdef

#endif
