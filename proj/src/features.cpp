#include "dropdef/features.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

namespace dropdef {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

const Matrix& cached_filterbank(const FrontendConfig& config) {
    using KeyT = std::tuple<int, int, int, double, double>;
    static std::mutex mutex;
    static std::map<KeyT, Matrix> cache;
    const KeyT key{config.sample_rate, config.stft.window_size, config.mel_bands, config.fmin,
                   config.fmax};
    std::lock_guard lock(mutex);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, mel_filterbank(config)).first;
    return it->second;
}

}  // namespace

Matrix mel_filterbank(const FrontendConfig& config) {
    const int bins = config.stft.bins();
    const int bands = config.mel_bands;
    if (bands < 1) throw ShapeError("mel_filterbank: need at least one band");
    const double lo = hz_to_mel(config.fmin);
    const double hi = hz_to_mel(config.fmax);
    Vector edges(bands + 2);
    for (int i = 0; i < bands + 2; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (bands + 1));

    Matrix fb = Matrix::Zero(bands, bins);
    const double bin_hz = static_cast<double>(config.sample_rate) / config.stft.window_size;
    for (int b = 0; b < bands; ++b) {
        const double left = edges[b], centre = edges[b + 1], right = edges[b + 2];
        for (int k = 0; k < bins; ++k) {
            const double f = k * bin_hz;
            if (f > left && f < centre)
                fb(b, k) = (f - left) / (centre - left);
            else if (f >= centre && f < right)
                fb(b, k) = (right - f) / (right - centre);
        }
    }
    return fb;
}

FeatureTrace featurize_traced(const Waveform& x, const FrontendConfig& config) {
    if (x.empty()) throw InputTooShort("featurize: empty waveform");
    FeatureTrace trace;
    trace.spectrum = stft(x, config.stft);
    const Matrix power = trace.spectrum.frames.cwiseAbs2();
    trace.energies = power * cached_filterbank(config).transpose();
    trace.features = trace.energies.cwiseMax(config.log_floor).array().log().matrix();
    return trace;
}

Vector featurize_backward(const FeatureTrace& trace, const Matrix& grad_features,
                          const FrontendConfig& config) {
    if (grad_features.rows() != trace.features.rows() || grad_features.cols() != trace.features.cols())
        throw ShapeError("featurize_backward: gradient shape mismatch");
    const Matrix grad_energy =
        (trace.energies.array() > config.log_floor)
            .select(grad_features.array() / trace.energies.array(), 0.0)
            .matrix();
    // d|S|^2 / dS in the (d/dRe + i d/dIm) convention is 2 S.
    const Matrix grad_power = grad_energy * cached_filterbank(config);
    const ComplexMatrix grad_spec =
        (2.0 * trace.spectrum.frames.array() * grad_power.array().cast<std::complex<double>>()).matrix();
    return stft_adjoint(grad_spec, config.stft, trace.spectrum.signal_length);
}

}  // namespace dropdef
