#include "dropdef/audio.hpp"

#include <unsupported/Eigen/FFT>

#include <numbers>
#include <ostream>
#include <vector>

namespace dropdef {

namespace {

Eigen::FFT<double>& half_spectrum_fft() {
    thread_local Eigen::FFT<double> fft = [] {
        Eigen::FFT<double> f;
        f.SetFlag(Eigen::FFT<double>::HalfSpectrum);
        return f;
    }();
    return fft;
}

void check_geometry(const StftGeometry& g) {
    if (g.window_size < 2 || g.window_size % 2 != 0)
        throw ShapeError("stft: window size must be even and >= 2");
    if (g.hop < 1 || g.hop > g.window_size) throw ShapeError("stft: hop must be in [1, N]");
}

// Squared-window overlap sum, floored (see header).
Vector window_sum_square(const StftGeometry& g, Eigen::Index frames, Eigen::Index length) {
    const Vector w = make_window(g.window_size, g.window);
    Vector d = Vector::Zero(length);
    for (Eigen::Index f = 0; f < frames; ++f)
        d.segment(f * g.hop, g.window_size) += w.cwiseAbs2();
    const double floor = 0.1 * d.maxCoeff();
    return d.cwiseMax(floor);
}

}  // namespace

double amplitude_bound(double reference_db, double margin_db) {
    return std::pow(10.0, (reference_db - margin_db) / 20.0);
}

Eigen::Index StftGeometry::frame_count(Eigen::Index length) const {
    if (length < window_size) return 0;
    return (length - window_size) / hop + 1;
}

Vector make_window(int size, WindowKind kind) {
    if (kind == WindowKind::rectangular) return Vector::Ones(size);
    Vector w(size);
    for (int n = 0; n < size; ++n)
        w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / size);
    return w;
}

Spectrogram stft(const Waveform& x, const StftGeometry& geometry) {
    check_geometry(geometry);
    const Eigen::Index frames = geometry.frame_count(x.size());
    if (frames == 0) throw InputTooShort("stft: signal shorter than one window");
    const int n = geometry.window_size;
    const Vector w = make_window(n, geometry.window);

    Spectrogram spec;
    spec.geometry = geometry;
    spec.signal_length = x.size();
    spec.sample_rate = x.sample_rate;
    spec.frames.resize(frames, geometry.bins());

    auto& fft = half_spectrum_fft();
    std::vector<double> buf(n);
    std::vector<std::complex<double>> out;
    for (Eigen::Index f = 0; f < frames; ++f) {
        for (int m = 0; m < n; ++m) buf[m] = w[m] * x.samples[f * geometry.hop + m];
        fft.fwd(out, buf);
        for (int k = 0; k < geometry.bins(); ++k) spec.frames(f, k) = out[k];
    }
    return spec;
}

Waveform istft(const Spectrogram& spec) {
    const auto& g = spec.geometry;
    check_geometry(g);
    const Eigen::Index frames = spec.frames.rows();
    if (spec.frames.cols() != g.bins()) throw ShapeError("istft: bin count does not match window size");
    if (frames == 0 || g.frame_count(spec.signal_length) != frames)
        throw ShapeError("istft: frame count inconsistent with signal length");

    const int n = g.window_size;
    const Vector w = make_window(n, g.window);
    Vector acc = Vector::Zero(spec.signal_length);

    auto& fft = half_spectrum_fft();
    std::vector<std::complex<double>> in(g.bins());
    std::vector<double> out;
    for (Eigen::Index f = 0; f < frames; ++f) {
        for (int k = 0; k < g.bins(); ++k) in[k] = spec.frames(f, k);
        // Bins 0 and N/2 of a real signal are real; drop any imaginary part.
        in[0] = in[0].real();
        in[g.bins() - 1] = in[g.bins() - 1].real();
        fft.inv(out, in, n);
        for (int m = 0; m < n; ++m) acc[f * g.hop + m] += w[m] * out[m];
    }
    const Vector d = window_sum_square(g, frames, spec.signal_length);
    return Waveform(acc.cwiseQuotient(d), spec.sample_rate);
}

Vector stft_adjoint(const ComplexMatrix& grad, const StftGeometry& geometry,
                    Eigen::Index signal_length) {
    check_geometry(geometry);
    const int n = geometry.window_size;
    const int bins = geometry.bins();
    if (grad.cols() != bins || geometry.frame_count(signal_length) != grad.rows())
        throw ShapeError("stft_adjoint: gradient shape does not match geometry");
    const Vector w = make_window(n, geometry.window);

    // dL/dx[fh+m] = w[m] * sum_{k=0}^{N/2} Re(G_k e^{2 pi i k m / N})
    //            = w[m] * N * irfft(H)[m], H_k = G_k / 2 inside, Re(G_k) at the ends.
    Vector out = Vector::Zero(signal_length);
    auto& fft = half_spectrum_fft();
    std::vector<std::complex<double>> h(bins);
    std::vector<double> t;
    for (Eigen::Index f = 0; f < grad.rows(); ++f) {
        h[0] = grad(f, 0).real();
        h[bins - 1] = grad(f, bins - 1).real();
        for (int k = 1; k < bins - 1; ++k) h[k] = 0.5 * grad(f, k);
        fft.inv(t, h, n);
        for (int m = 0; m < n; ++m) out[f * geometry.hop + m] += w[m] * n * t[m];
    }
    return out;
}

ComplexMatrix istft_adjoint(const Vector& grad, const StftGeometry& geometry,
                            Eigen::Index frame_count) {
    check_geometry(geometry);
    const int n = geometry.window_size;
    const int bins = geometry.bins();
    const Eigen::Index length = grad.size();
    if (geometry.frame_count(length) != frame_count)
        throw ShapeError("istft_adjoint: frame count inconsistent with signal length");
    const Vector w = make_window(n, geometry.window);
    const Vector scaled = grad.cwiseQuotient(window_sum_square(geometry, frame_count, length));

    // irfft(S)[m] = (1/N)[Re S_0 + Re S_{N/2}(-1)^m + 2 sum Re(S_k e^{i theta})]
    // so the gradient w.r.t. S_k is (c_k / N) * rfft(v)_k, c = 1 at the ends, 2 inside.
    ComplexMatrix out(frame_count, bins);
    auto& fft = half_spectrum_fft();
    std::vector<double> v(n);
    std::vector<std::complex<double>> spec;
    for (Eigen::Index f = 0; f < frame_count; ++f) {
        for (int m = 0; m < n; ++m) v[m] = w[m] * scaled[f * geometry.hop + m];
        fft.fwd(spec, v);
        for (int k = 0; k < bins; ++k) {
            const double c = (k == 0 || k == bins - 1) ? 1.0 : 2.0;
            out(f, k) = (c / n) * spec[k];
        }
        out(f, 0) = out(f, 0).real();
        out(f, bins - 1) = out(f, bins - 1).real();
    }
    return out;
}

void write_spectrogram_csv(std::ostream& out, const Spectrogram& spec) {
    out << "frame_index";
    for (Eigen::Index k = 0; k < spec.frames.cols(); ++k) out << ",bin_" << k << "_re,bin_" << k << "_im";
    out << '\n';
    out.precision(17);
    for (Eigen::Index f = 0; f < spec.frames.rows(); ++f) {
        out << f;
        for (Eigen::Index k = 0; k < spec.frames.cols(); ++k)
            out << ',' << spec.frames(f, k).real() << ',' << spec.frames(f, k).imag();
        out << '\n';
    }
}

}  // namespace dropdef
