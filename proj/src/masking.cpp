#include "dropdef/masking.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <vector>

namespace dropdef {

namespace {

constexpr double power_scale = 8.0 / 3.0;  // Hann power normalisation

double to_db(double power_ratio, const MaskingConfig& c) {
    if (power_ratio <= 0.0) return c.psd_floor_db;
    return std::max(c.full_scale_db + 10.0 * std::log10(power_ratio), c.psd_floor_db);
}

// Tonal-neighbourhood offsets, widening with frequency as in MPEG-1 layer I.
std::vector<int> neighbourhood(Eigen::Index k, Eigen::Index bins) {
    const double position = static_cast<double>(k) / static_cast<double>(bins - 1);
    if (position < 63.0 / 256.0) return {2};
    if (position < 127.0 / 256.0) return {2, 3};
    return {2, 3, 4, 5, 6};
}

void check_same_shape(const PsdEstimate& p, const MaskingThreshold& t) {
    if (p.db.rows() != t.db.rows() || p.db.cols() != t.db.cols())
        throw ShapeError("masking_penalty: PSD and threshold shapes differ");
}

}  // namespace

double bark(double hz) {
    return 13.0 * std::atan(0.00076 * hz) + 3.5 * std::atan(std::pow(hz / 7500.0, 2.0));
}

double hearing_threshold_db(double hz, const MaskingConfig& config) {
    const double khz = std::max(hz, 20.0) / 1000.0;
    return 3.64 * std::pow(khz, -0.8) - 6.5 * std::exp(-0.6 * std::pow(khz - 3.3, 2.0)) +
           1e-3 * std::pow(khz, 4.0) + config.hearing_offset_db;
}

Vector hearing_threshold_curve(int sample_rate, int window_size, const MaskingConfig& config) {
    const int bins = window_size / 2 + 1;
    Vector ath(bins);
    for (int k = 0; k < bins; ++k)
        ath[k] = hearing_threshold_db(static_cast<double>(k) * sample_rate / window_size, config);
    return ath;
}

PsdEstimate psd(const Waveform& x, const StftGeometry& geometry, const MaskingConfig& config) {
    const Spectrogram s = stft(x, geometry);
    const double n2 = static_cast<double>(geometry.window_size) * geometry.window_size;
    PsdEstimate out;
    out.db = s.frames.cwiseAbs2().unaryExpr([&](double p) { return to_db(p * power_scale / n2, config); });
    return out;
}

Vector psd_backward(const Waveform& x, const Matrix& grad_psd, const StftGeometry& geometry,
                    const MaskingConfig& config) {
    const Spectrogram s = stft(x, geometry);
    if (grad_psd.rows() != s.frames.rows() || grad_psd.cols() != s.frames.cols())
        throw ShapeError("psd_backward: gradient shape mismatch");
    const double n2 = static_cast<double>(geometry.window_size) * geometry.window_size;
    // d(10 log10 |S|^2)/dS = (10 / ln 10) * 2 S / |S|^2 in the d/dRe + i d/dIm convention.
    const double c = 20.0 / std::log(10.0);
    ComplexMatrix g(s.frames.rows(), s.frames.cols());
    for (Eigen::Index k = 0; k < g.cols(); ++k)
        for (Eigen::Index f = 0; f < g.rows(); ++f) {
            const double p = std::norm(s.frames(f, k));
            const bool floored = p <= 0.0 || to_db(p * power_scale / n2, config) <= config.psd_floor_db;
            g(f, k) = floored ? std::complex<double>{} : grad_psd(f, k) * c * s.frames(f, k) / p;
        }
    return stft_adjoint(g, geometry, x.size());
}

Vector frame_masking_threshold(const Vector& p, const Vector& barks, const Vector& ath, const MaskingConfig& config) {
    const Eigen::Index bins = p.size();

    struct Masker {
        Eigen::Index bin;
        double bark;
        double level;  // dB
    };
    std::vector<Masker> maskers;
    for (Eigen::Index k = 1; k + 1 < bins; ++k) {
        if (!(p[k] > p[k - 1] && p[k] >= p[k + 1])) continue;
        bool tonal = true;
        for (int d : neighbourhood(k, bins)) {
            if (k - d >= 0 && p[k] - p[k - d] < config.tonal_margin_db) tonal = false;
            if (k + d < bins && p[k] - p[k + d] < config.tonal_margin_db) tonal = false;
        }
        if (!tonal) continue;
        const double level = 10.0 * std::log10(std::pow(10.0, 0.1 * p[k - 1]) + std::pow(10.0, 0.1 * p[k]) +
                                               std::pow(10.0, 0.1 * p[k + 1]));
        if (level < ath[k]) continue;
        // Within half a Bark only the strongest masker survives.
        if (!maskers.empty() && barks[k] - maskers.back().bark < 0.5) {
            if (level > maskers.back().level) maskers.back() = {k, barks[k], level};
            continue;
        }
        maskers.push_back({k, barks[k], level});
    }

    if (maskers.empty()) return ath;

    const double a = config.combine_exponent;
    Vector acc = (ath.array() * (0.1 * a * std::log(10.0))).exp().matrix();
    for (const auto& m : maskers) {
        const double offset = -6.025 - 0.275 * m.bark;
        const double upper_slope = -27.0 + 0.37 * std::max(m.level - 40.0, 0.0);
        for (Eigen::Index j = 0; j < bins; ++j) {
            const double dz = barks[j] - m.bark;
            const double spread = dz < 0.0 ? 27.0 * dz : upper_slope * dz;
            acc[j] += std::pow(10.0, 0.1 * a * (m.level + offset + spread));
        }
    }
    return (acc.array().log10() * (10.0 / a)).matrix();
}

MaskingThreshold masking_threshold(const Waveform& x, const StftGeometry& geometry, const MaskingConfig& config) {
    const PsdEstimate p = psd(x, geometry, config);
    const int bins = geometry.bins();
    Vector barks(bins);
    for (int k = 0; k < bins; ++k) barks[k] = bark(static_cast<double>(k) * x.sample_rate / geometry.window_size);
    const Vector ath = hearing_threshold_curve(x.sample_rate, geometry.window_size, config);

    MaskingThreshold out;
    out.db.resize(p.db.rows(), bins);
    for (Eigen::Index f = 0; f < p.db.rows(); ++f)
        out.db.row(f) = frame_masking_threshold(p.db.row(f).transpose(), barks, ath, config).transpose();
    return out;
}

double masking_penalty(const PsdEstimate& p, const MaskingThreshold& theta) {
    check_same_shape(p, theta);
    if (p.db.rows() == 0) return 0.0;
    return (p.db - theta.db).cwiseMax(0.0).sum() / static_cast<double>(p.db.rows());
}

Matrix masking_penalty_grad(const PsdEstimate& p, const MaskingThreshold& theta) {
    check_same_shape(p, theta);
    const double w = p.db.rows() > 0 ? 1.0 / static_cast<double>(p.db.rows()) : 0.0;
    return (p.db.array() > theta.db.array()).select(Matrix::Constant(p.db.rows(), p.db.cols(), w), 0.0);
}

void write_db_csv(std::ostream& out, const Matrix& db) {
    out << "frame,bin,value_db\n" << std::setprecision(10);
    for (Eigen::Index f = 0; f < db.rows(); ++f)
        for (Eigen::Index k = 0; k < db.cols(); ++k) out << f << ',' << k << ',' << db(f, k) << '\n';
}

}  // namespace dropdef
