#ifndef DROPDEF_FEATURES_HPP
#define DROPDEF_FEATURES_HPP

#include "dropdef/audio.hpp"

namespace dropdef {

struct FrontendConfig {
    int sample_rate = 16000;
    StftGeometry stft{};
    int mel_bands = 24;
    double fmin = 60.0;
    double fmax = 7600.0;
    double log_floor = 1e-10;
};

/// Triangular HTK-mel filterbank, mel_bands x (N/2 + 1).
Matrix mel_filterbank(const FrontendConfig& config);

/// Log-mel features plus what the backward pass needs.
struct FeatureTrace {
    Spectrogram spectrum;
    Matrix energies;  // frames x bands, before flooring
    Matrix features;  // frames x bands, log(max(energy, floor))
};

FeatureTrace featurize_traced(const Waveform& x, const FrontendConfig& config);

inline Matrix featurize(const Waveform& x, const FrontendConfig& config) {
    return featurize_traced(x, config).features;
}

/// dL/dx given dL/dfeatures. Floored energies pass zero gradient.
Vector featurize_backward(const FeatureTrace& trace, const Matrix& grad_features,
                          const FrontendConfig& config);

}  // namespace dropdef

#endif
