#include "dropdef/denoise.hpp"

#include <cmath>

namespace dropdef {

namespace {

using Complex = std::complex<double>;

void check_profile(const NoiseProfile& profile, const StftGeometry& g) {
    if (profile.magnitude.size() != g.bins()) throw ShapeError("spectral_subtract: profile length != N/2 + 1");
}

ComplexMatrix subtract_forward(const ComplexMatrix& s, const Vector& noise, double over, double floor) {
    ComplexMatrix out(s.rows(), s.cols());
    for (Eigen::Index k = 0; k < s.cols(); ++k)
        for (Eigen::Index f = 0; f < s.rows(); ++f) {
            const double m = std::abs(s(f, k));
            if (m == 0.0) {
                out(f, k) = 0.0;
                continue;
            }
            const double reduced = m - over * noise[k];
            out(f, k) = reduced >= floor * m ? s(f, k) * (reduced / m) : s(f, k) * floor;
        }
    return out;
}

// Gradients w.r.t. the input spectrum and the noise profile.
std::pair<ComplexMatrix, Vector> subtract_backward(const ComplexMatrix& s, const Vector& noise, double over,
                                                   double floor, const ComplexMatrix& grad_out) {
    ComplexMatrix gs(s.rows(), s.cols());
    Vector gn = Vector::Zero(s.cols());
    for (Eigen::Index k = 0; k < s.cols(); ++k)
        for (Eigen::Index f = 0; f < s.rows(); ++f) {
            const Complex g = grad_out(f, k);
            const double m = std::abs(s(f, k));
            if (m == 0.0) {
                gs(f, k) = floor * g;
                continue;
            }
            const double reduced = m - over * noise[k];
            if (reduced >= floor * m) {
                // S' = S - a P S/|S|; Jacobian of S/|S| is (I - u u^T)/|S|.
                const Complex u = s(f, k) / m;
                const double radial = (std::conj(u) * g).real();
                gs(f, k) = g - (over * noise[k] / m) * (g - u * radial);
                gn[k] -= over * radial;
            } else {
                gs(f, k) = floor * g;
            }
        }
    return {gs, gn};
}

Waveform resynthesise(const Spectrogram& like, ComplexMatrix frames) {
    Spectrogram out = like;
    out.frames = std::move(frames);
    return istft(out);
}

}  // namespace

NoiseProfile estimate_noise(const Waveform& x, int leading_frames, const StftGeometry& geometry) {
    if (leading_frames < 1) throw std::invalid_argument("estimate_noise: need at least one frame");
    if (geometry.frame_count(x.size()) < leading_frames)
        throw InputTooShort("estimate_noise: signal has fewer than " + std::to_string(leading_frames) + " frames");
    const Spectrogram s = stft(x, geometry);
    return {s.frames.topRows(leading_frames).cwiseAbs().colwise().mean().transpose()};
}

Waveform spectral_subtract(const Waveform& x, const NoiseProfile& profile, double oversubtraction, double floor,
                           const StftGeometry& geometry) {
    check_profile(profile, geometry);
    const Spectrogram s = stft(x, geometry);
    return resynthesise(s, subtract_forward(s.frames, profile.magnitude, oversubtraction, floor));
}

Vector spectral_subtract_backward(const Waveform& x, const NoiseProfile& profile, double oversubtraction,
                                  double floor, const Vector& grad_output, const StftGeometry& geometry) {
    check_profile(profile, geometry);
    if (grad_output.size() != x.size()) throw ShapeError("spectral_subtract_backward: gradient length mismatch");
    const Spectrogram s = stft(x, geometry);
    const ComplexMatrix g_out = istft_adjoint(grad_output, geometry, s.frame_count());
    const ComplexMatrix g_spec =
        subtract_backward(s.frames, profile.magnitude, oversubtraction, floor, g_out).first;
    return stft_adjoint(g_spec, geometry, x.size());
}

Waveform denoise(const Waveform& x, const SpectralSubtractConfig& config) {
    const Spectrogram s = stft(x, config.stft);
    if (s.frame_count() < config.leading_frames)
        throw InputTooShort("denoise: signal has fewer frames than the noise estimate needs");
    const Vector noise = s.frames.topRows(config.leading_frames).cwiseAbs().colwise().mean().transpose();
    return resynthesise(s, subtract_forward(s.frames, noise, config.oversubtraction, config.floor));
}

Vector denoise_backward(const Waveform& x, const Vector& grad_output, const SpectralSubtractConfig& config) {
    if (grad_output.size() != x.size()) throw ShapeError("denoise_backward: gradient length mismatch");
    const Spectrogram s = stft(x, config.stft);
    const int lead = config.leading_frames;
    if (s.frame_count() < lead) throw InputTooShort("denoise: signal has fewer frames than the noise estimate needs");
    const Vector noise = s.frames.topRows(lead).cwiseAbs().colwise().mean().transpose();

    const ComplexMatrix g_out = istft_adjoint(grad_output, config.stft, s.frame_count());
    auto [g_spec, g_noise] = subtract_backward(s.frames, noise, config.oversubtraction, config.floor, g_out);
    // noise_k = mean_f |S_fk| over the leading frames.
    for (Eigen::Index f = 0; f < lead; ++f)
        for (Eigen::Index k = 0; k < s.frames.cols(); ++k) {
            const double m = std::abs(s.frames(f, k));
            if (m > 0.0) g_spec(f, k) += (g_noise[k] / lead) * (s.frames(f, k) / m);
        }
    return stft_adjoint(g_spec, config.stft, x.size());
}

}  // namespace dropdef
