#ifndef DROPDEF_TESTS_SUPPORT_HPP
#define DROPDEF_TESTS_SUPPORT_HPP

#include "dropdef/corpus.hpp"
#include "dropdef/rng.hpp"
#include "dropdef/train.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace dropdef::testing {

inline Waveform sine(double hz, Eigen::Index length, double amplitude = 1.0, int sample_rate = 16000) {
    Vector s(length);
    for (Eigen::Index i = 0; i < length; ++i)
        s[i] = amplitude * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / sample_rate);
    return {s, sample_rate};
}

inline Waveform white_noise(Eigen::Index length, double amplitude, std::uint64_t seed, int sample_rate = 16000) {
    Rng rng(seed);
    Vector s(length);
    for (Eigen::Index i = 0; i < length; ++i) s[i] = amplitude * rng.uniform(-1.0, 1.0);
    return {s, sample_rate};
}

inline Vector random_vector(Eigen::Index n, double scale, Rng& rng) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * rng.normal();
    return v;
}

/// |a - b| / max(|a|, |b|, floor)
inline double relative_error(double a, double b, double floor = 1e-12) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of a scalar function of a vector along coordinate i.
template <class F>
double central_difference(F&& f, Vector x, Eigen::Index i, double h) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    return (up - down) / (2.0 * h);
}

inline constexpr std::uint64_t toy_train_seed = 11;

/// Small, quick recogniser trained on the synthetic corpus; built once per process.
inline const AcousticModel& toy_model() {
    static const AcousticModel model = [] {
        const SynthConfig synth{};
        const auto corpus = synthesize_corpus(synth, 60, toy_train_seed);
        const Alphabet alphabet(synth.alphabet);
        ModelGeometry geometry;
        geometry.hidden_width = 96;
        AcousticModel m = init_model(alphabet, FrontendConfig{}, geometry, 0.05, 12);
        TrainConfig tc;
        tc.epochs = 30;
        tc.seed = 13;
        return train(std::move(m), corpus, tc);
    }();
    return model;
}

/// Held-out utterances the toy model was not trained on.
inline std::vector<Utterance> toy_eval_set(int count) {
    std::vector<Transcript> avoid{"ok"};
    for (const auto& u : synthesize_corpus(SynthConfig{}, 60, toy_train_seed)) avoid.push_back(u.text);
    return synthesize_corpus(SynthConfig{}, count, 97, avoid);
}

}  // namespace dropdef::testing

#endif
