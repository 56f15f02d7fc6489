#include "dropdef/denoise.hpp"
#include "dropdef/masking.hpp"

#include "doctest.h"
#include "support.hpp"

#include <sstream>

using namespace dropdef;
using namespace dropdef::testing;

namespace {

Vector bark_curve(int bins, int sample_rate = 16000, int window = 512) {
    Vector b(bins);
    for (int k = 0; k < bins; ++k) b[k] = bark(static_cast<double>(k) * sample_rate / window);
    return b;
}

// Threshold of one masker plus the hearing curve, written out from the model's definition.
Vector single_masker_threshold(const Vector& p, Eigen::Index k, const Vector& barks, const Vector& ath, double alpha = 0.3) {
    const double level = 10.0 * std::log10(std::pow(10.0, p[k - 1] / 10.0) + std::pow(10.0, p[k] / 10.0) +
                                           std::pow(10.0, p[k + 1] / 10.0));
    Vector out(p.size());
    for (Eigen::Index j = 0; j < p.size(); ++j) {
        const double dz = barks[j] - barks[k];
        const double slope = dz < 0.0 ? 27.0 : -27.0 + 0.37 * std::max(level - 40.0, 0.0);
        const double t = level - 6.025 - 0.275 * barks[k] + slope * dz;
        out[j] = 10.0 / alpha * std::log10(std::pow(10.0, alpha * ath[j] / 10.0) + std::pow(10.0, alpha * t / 10.0));
    }
    return out;
}

double snr_db(const Vector& clean, const Vector& noisy) {
    return 10.0 * std::log10(clean.squaredNorm() / (noisy - clean).squaredNorm());
}

}  // namespace

TEST_CASE("estimate_noise examples") {
    const StftGeometry g{};
    const auto silent = estimate_noise(Waveform(Vector::Zero(4000), 16000), 6, g);
    CHECK(silent.magnitude.size() == g.bins());
    CHECK(silent.magnitude.cwiseAbs().maxCoeff() == 0.0);

    const auto noise = white_noise(512 + 31 * 128, 0.3, 21);
    const auto flat = estimate_noise(noise, 32, g);
    const Vector inner = flat.magnitude.segment(2, g.bins() - 4);
    // ripple as the relative standard deviation across bins
    const double mean = inner.mean();
    const double sd = std::sqrt((inner.array() - mean).square().mean());
    CAPTURE(sd / mean);
    CHECK(sd / mean < 0.2);

    const auto tone = sine(16000.0 * 40 / 512, 512 + 9 * 128, 0.5);
    const auto peak = estimate_noise(tone, 10, g);
    Eigen::Index arg;
    peak.magnitude.maxCoeff(&arg);
    CHECK(arg == 40);

    CHECK_THROWS_AS(estimate_noise(tone, 11, g), InputTooShort);
}

TEST_CASE("spectral_subtract with a zero profile and zero floor is the identity") {
    const StftGeometry g{};
    const auto x = white_noise(4000, 0.5, 3);
    const NoiseProfile zero{Vector::Zero(g.bins())};
    const auto y = spectral_subtract(x, zero, 1.0, 0.0, g);
    const Eigen::Index lo = g.window_size, len = g.frame_count(4000) * g.hop - lo;
    CHECK((y.samples - x.samples).segment(lo, len).norm() / x.samples.segment(lo, len).norm() < 1e-6);
    CHECK_THROWS_AS(spectral_subtract(x, NoiseProfile{Vector::Zero(10)}, 1.0, 0.0, g), ShapeError);
}

TEST_CASE("spectral subtraction improves the SNR of a noisy tone") {
    // noise-only lead-in for the estimate, then a bin-centred tone whose power
    // is 10 dB below the broadband noise power
    const Eigen::Index lead = 512 + 7 * 128, body = 16000;
    const auto noise = white_noise(lead + body, 1.0, 44);
    const double noise_power = noise.samples.squaredNorm() / static_cast<double>(noise.size());
    const double amplitude = std::sqrt(2.0 * noise_power * 0.1);
    Vector clean = Vector::Zero(lead + body);
    clean.tail(body) = sine(16000.0 * 48 / 512, body, amplitude).samples;
    const double scale = 0.9 / (clean + noise.samples).cwiseAbs().maxCoeff();
    clean *= scale;
    const Waveform noisy(clean + scale * noise.samples, 16000);

    const SpectralSubtractConfig cfg{};
    const auto out = denoise(noisy, cfg);
    const Eigen::Index from = lead + 512, len = body - 1024;
    const double before = snr_db(clean.segment(from, len), noisy.samples.segment(from, len));
    const double after = snr_db(clean.segment(from, len), out.samples.segment(from, len));
    CAPTURE(before);
    CAPTURE(after);
    CHECK(before == doctest::Approx(-10.0).epsilon(0.05));
    CHECK(after - before >= 6.0);
}

TEST_CASE("spectral subtraction gradients match finite differences") {
    const StftGeometry g{};
    Rng rng(8);
    const auto x = white_noise(2200, 0.4, 9);
    const auto profile = estimate_noise(white_noise(2200, 0.2, 10), 6, g);
    const Vector w = random_vector(x.size(), 1.0, rng);

    auto fixed = [&](const Vector& v) {
        return spectral_subtract(Waveform(v, 16000), profile, 1.0, 0.02, g).samples.squaredNorm();
    };
    const Vector out = spectral_subtract(x, profile, 1.0, 0.02, g).samples;
    const Vector g1 = spectral_subtract_backward(x, profile, 1.0, 0.02, 2.0 * out, g);

    const SpectralSubtractConfig cfg{};
    auto full = [&](const Vector& v) { return denoise(Waveform(v, 16000), cfg).samples.dot(w); };
    const Vector g2 = denoise_backward(x, w, cfg);

    const double s1 = g1.cwiseAbs().maxCoeff(), s2 = g2.cwiseAbs().maxCoeff();
    for (int k = 0; k < 25; ++k) {
        const auto i = static_cast<Eigen::Index>(rng.below(2200));
        CHECK(relative_error(central_difference(fixed, x.samples, i, 1e-7), g1[i], 1e-4 * s1) < 1e-3);
        CHECK(relative_error(central_difference(full, x.samples, i, 1e-7), g2[i], 1e-4 * s2) < 1e-3);
    }
    CHECK_THROWS_AS(denoise_backward(x, Vector::Zero(5), cfg), ShapeError);
}

TEST_CASE("psd examples") {
    const MaskingConfig mc{};
    const auto zero = psd(Waveform(Vector::Zero(1024), 16000));
    CHECK((zero.db.array() == mc.psd_floor_db).all());

    const auto x = white_noise(3000, 0.3, 5);
    const auto p1 = psd(x);
    const auto p2 = psd(Waveform(2.0 * x.samples, 16000));
    CHECK(((p2.db - p1.db).array() - 20.0 * std::log10(2.0)).abs().maxCoeff() < 1e-9);
    CHECK(std::abs(20.0 * std::log10(2.0) - 6.0206) < 1e-4);

    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const double c = std::exp(rng.uniform(-4.0, 2.0));
        const auto pc = psd(Waveform(c * x.samples, 16000));
        CHECK(((pc.db - p1.db).array() - 20.0 * std::log10(c)).abs().maxCoeff() < 1e-9);
    }
    CHECK_THROWS_AS(psd(white_noise(100, 0.1, 1)), InputTooShort);
}

TEST_CASE("psd of a bin-centred full-scale sine stays within the Hann main lobe") {
    const int k0 = 64;
    const auto x = sine(16000.0 * k0 / 512, 4000, 1.0);
    const auto p = psd(x);
    for (Eigen::Index f = 0; f < p.db.rows(); ++f) {
        const Vector power = p.db.row(f).transpose().unaryExpr([](double db) { return std::pow(10.0, db / 10.0); });
        Eigen::Index arg;
        power.maxCoeff(&arg);
        CHECK(arg == k0);
        const double total = power.sum();
        CHECK(power.segment(k0 - 2, 5).sum() / total >= 0.99);
        // a periodic Hann window spreads a bin-centred tone over k0 - 1 .. k0 + 1 in a 1:4:1 power ratio
        CHECK(power[k0] / total == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
        // |S| is N/4 at k0 and N/8 beside it, so the three bins sum to (8/3)(3/32) = 1/4 of full scale
        CHECK(10.0 * std::log10(power.segment(k0 - 1, 3).sum()) == doctest::Approx(96.0 + 10.0 * std::log10(0.25)).epsilon(1e-9));
    }
}

TEST_CASE("psd gradient matches finite differences") {
    Rng rng(12);
    const auto x = white_noise(1500, 0.3, 13);
    const auto p = psd(x);
    Matrix w(p.db.rows(), p.db.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.normal();
    const Vector g = psd_backward(x, w);
    auto f = [&](const Vector& v) { return psd(Waveform(v, 16000)).db.cwiseProduct(w).sum(); };
    const double s = g.cwiseAbs().maxCoeff();
    for (int k = 0; k < 20; ++k) {
        const auto i = static_cast<Eigen::Index>(rng.below(1500));
        CHECK(relative_error(central_difference(f, x.samples, i, 1e-7), g[i], 1e-4 * s) < 1e-3);
    }
}

TEST_CASE("hearing threshold curve") {
    const MaskingConfig mc{};
    const Vector ath = hearing_threshold_curve(16000, 512, mc);
    CHECK(ath.size() == 257);
    // the ear is most sensitive near 3.3 kHz
    Eigen::Index arg;
    ath.minCoeff(&arg);
    CHECK(std::abs(arg * 31.25 - 3300.0) < 300.0);
    CHECK(hearing_threshold_db(1000.0, mc) == doctest::Approx(3.64 - 6.5 * std::exp(-0.6 * 2.3 * 2.3) + 1e-3 - 12.0));
    CHECK(hearing_threshold_db(0.0, mc) == hearing_threshold_db(20.0, mc));
    CHECK(bark(0.0) == 0.0);
    CHECK(bark(1000.0) == doctest::Approx(13.0 * std::atan(0.76) + 3.5 * std::atan(std::pow(1000.0 / 7500.0, 2.0))));
}

TEST_CASE("masking threshold of silence is the hearing threshold") {
    const auto theta = masking_threshold(Waveform(Vector::Zero(2000), 16000));
    const Vector ath = hearing_threshold_curve(16000, 512);
    for (Eigen::Index f = 0; f < theta.db.rows(); ++f) CHECK(theta.db.row(f).transpose() == ath);
}

TEST_CASE("a single tonal masker spreads as the two-slope model prescribes") {
    const Vector barks = bark_curve(257);
    const Vector ath = hearing_threshold_curve(16000, 512);
    Vector p = Vector::Constant(257, -50.0);
    p[100] = 80.0;
    p[99] = p[101] = 74.0;
    const Vector theta = frame_masking_threshold(p, barks, ath);
    const Vector oracle = single_masker_threshold(p, 100, barks, ath);
    CHECK((theta - oracle).cwiseAbs().maxCoeff() < 1e-9);

    // a weaker masker within half a Bark is discarded
    Vector q = p;
    q[108] = 70.0;
    CHECK(barks[108] - barks[100] < 0.5);
    CHECK((frame_masking_threshold(q, barks, ath) - oracle).cwiseAbs().maxCoeff() < 1e-9);

    // a masker below the hearing threshold does not count
    Vector quiet = Vector::Constant(257, -80.0);
    quiet[10] = ath[10] - 20.0;
    CHECK(frame_masking_threshold(quiet, barks, ath) == ath);
}

TEST_CASE("masking threshold responds to a loud tone") {
    const auto tone = sine(1000.0, 4000, 0.5);
    const auto theta = masking_threshold(tone);
    const Vector ath = hearing_threshold_curve(16000, 512);
    for (Eigen::Index k = 30; k <= 34; ++k)
        for (Eigen::Index f = 0; f < theta.db.rows(); ++f) CHECK(theta.db(f, k) > ath[k] + 10.0);

    const auto louder = masking_threshold(Waveform(tone.samples * std::pow(10.0, 0.5), 16000));
    const Vector barks = bark_curve(257);
    int checked = 0;
    for (Eigen::Index k = 0; k < 257; ++k) {
        if (std::abs(barks[k] - bark(1000.0)) > 0.3 || theta.db(3, k) - ath[k] < 20.0) continue;
        CHECK(std::abs(louder.db(3, k) - theta.db(3, k) - 10.0) <= 1.0);
        ++checked;
    }
    CHECK(checked >= 2);
}

TEST_CASE("masking threshold never falls below the hearing threshold") {
    const Vector ath = hearing_threshold_curve(16000, 512);
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        Rng rng(seed);
        Vector s = white_noise(3000, rng.uniform(0.0, 0.2), seed + 100).samples;
        for (int t = 0; t < 3; ++t) s += sine(rng.uniform(50.0, 7900.0), 3000, rng.uniform(0.0, 0.4)).samples;
        const auto theta = masking_threshold(Waveform(s, 16000));
        for (Eigen::Index f = 0; f < theta.db.rows(); ++f)
            CHECK(((theta.db.row(f).transpose() - ath).array() >= -1e-9).all());
    }
}

TEST_CASE("masking_penalty examples") {
    const Eigen::Index frames = 5;
    PsdEstimate p{Matrix::Constant(frames, 257, 10.0)};
    MaskingThreshold theta{Matrix::Constant(frames, 257, 20.0)};
    CHECK(masking_penalty(p, theta) == 0.0);
    p.db(2, 40) = 23.0;
    CHECK(masking_penalty(p, theta) == doctest::Approx(3.0 / frames));
    const Matrix g = masking_penalty_grad(p, theta);
    CHECK(g(2, 40) == doctest::Approx(1.0 / frames));
    CHECK(g.sum() == doctest::Approx(1.0 / frames));
    CHECK_THROWS_AS(masking_penalty(p, MaskingThreshold{Matrix::Zero(4, 257)}), ShapeError);
}

TEST_CASE("masking_penalty agrees with a scalar loop and is monotone") {
    Rng rng(14);
    for (int trial = 0; trial < 30; ++trial) {
        const Eigen::Index frames = 1 + static_cast<Eigen::Index>(rng.below(9));
        PsdEstimate p{Matrix(frames, 33)};
        MaskingThreshold theta{Matrix(frames, 33)};
        for (Eigen::Index i = 0; i < p.db.size(); ++i) {
            p.db.data()[i] = rng.uniform(-20.0, 60.0);
            theta.db.data()[i] = rng.uniform(-20.0, 60.0);
        }
        double loop = 0.0;
        for (Eigen::Index f = 0; f < frames; ++f)
            for (Eigen::Index k = 0; k < 33; ++k)
                if (p.db(f, k) > theta.db(f, k)) loop += p.db(f, k) - theta.db(f, k);
        const double base = masking_penalty(p, theta);
        CHECK(base == doctest::Approx(loop / static_cast<double>(frames)).epsilon(1e-12));
        CHECK(base >= 0.0);

        auto p_up = p;
        p_up.db.array() += rng.uniform(0.0, 5.0);
        CHECK(masking_penalty(p_up, theta) >= base);
        auto theta_up = theta;
        theta_up.db.array() += rng.uniform(0.0, 5.0);
        CHECK(masking_penalty(p, theta_up) <= base);
    }
}

TEST_CASE("PSD and threshold export as long-format CSV") {
    const Matrix m = (Matrix(2, 3) << 1, 2, 3, 4, 5, 6.5).finished();
    std::ostringstream out;
    write_db_csv(out, m);
    CHECK(out.str() == "frame,bin,value_db\n0,0,1\n0,1,2\n0,2,3\n1,0,4\n1,1,5\n1,2,6.5\n");
}
