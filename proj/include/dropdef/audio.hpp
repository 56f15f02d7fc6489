#ifndef DROPDEF_AUDIO_HPP
#define DROPDEF_AUDIO_HPP

#include "dropdef/types.hpp"

#include <cmath>
#include <iosfwd>

namespace dropdef {

/// Peak level in dB: 20 * log10(max_i |x_i|). Base 10 is the dBFS convention.
template <typename Scalar>
double peak_db(const BasicWaveform<Scalar>& x) {
    if (x.empty()) throw InputTooShort("peak_db: empty waveform");
    const double peak = static_cast<double>(x.samples.cwiseAbs().maxCoeff());
    if (peak == 0.0) throw std::domain_error("peak_db: all-zero waveform has no finite level");
    return 20.0 * std::log10(peak);
}

/// Largest per-sample magnitude allowed for a perturbation that must sit
/// `margin_db` below the peak of `x`.
double amplitude_bound(double reference_db, double margin_db);

enum class WindowKind { hann, rectangular };

struct StftGeometry {
    int window_size = 512;
    int hop = 128;
    WindowKind window = WindowKind::hann;

    [[nodiscard]] int bins() const { return window_size / 2 + 1; }
    /// Frames for a signal of `length` samples; no padding, trailing partial
    /// frame dropped. Returns 0 when the signal is shorter than one window.
    [[nodiscard]] Eigen::Index frame_count(Eigen::Index length) const;
};

/// Periodic Hann (COLA at hop = N/4) or all-ones window.
Vector make_window(int size, WindowKind kind);

struct Spectrogram {
    ComplexMatrix frames;  // frame_count x (N/2 + 1)
    StftGeometry geometry;
    Eigen::Index signal_length = 0;
    int sample_rate = 16000;

    [[nodiscard]] Eigen::Index frame_count() const { return frames.rows(); }
};

Spectrogram stft(const Waveform& x, const StftGeometry& geometry = {});

/// Least-squares overlap-add inverse. Output has the original signal length;
/// samples not covered by any frame are zero. The squared-window sum is
/// floored at 10% of its maximum so edge samples stay bounded when the
/// spectrogram has been modified.
Waveform istft(const Spectrogram& spec);

/// Transpose of stft as a real-linear map (complex entries read as
/// d/dRe + i d/dIm). Maps a spectrogram-shaped gradient to a waveform gradient.
Vector stft_adjoint(const ComplexMatrix& grad, const StftGeometry& geometry,
                    Eigen::Index signal_length);

/// Transpose of istft, same conventions as stft_adjoint.
ComplexMatrix istft_adjoint(const Vector& grad, const StftGeometry& geometry,
                            Eigen::Index frame_count);

/// CSV dump: `frame_index,bin_0_re,bin_0_im,...`.
void write_spectrogram_csv(std::ostream& out, const Spectrogram& spec);

}  // namespace dropdef

#endif
