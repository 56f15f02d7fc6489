#include "dropdef/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace dropdef {

Formants symbol_formants(int index) {
    return {300.0 + 130.0 * (index % 5), 1250.0 + 700.0 * (index / 5)};
}

std::pair<double, double> utterance_duration_bounds(const SynthConfig& c) {
    auto duration = [&](int symbols) {
        return c.lead_seconds + c.tail_seconds + symbols * c.symbol_seconds + (symbols - 1) * c.gap_seconds;
    };
    const int shortest = c.min_words * c.min_word_length + (c.min_words - 1);
    const int longest = c.max_words * c.max_word_length + (c.max_words - 1);
    return {duration(shortest), duration(longest)};
}

Transcript random_text(const SynthConfig& config, Rng& rng) {
    std::string letters;
    for (char c : config.alphabet)
        if (c != ' ') letters.push_back(c);
    if (letters.empty()) throw std::invalid_argument("random_text: alphabet has no letters");
    const auto words = config.min_words + static_cast<int>(rng.below(config.max_words - config.min_words + 1));
    Transcript text;
    for (int w = 0; w < words; ++w) {
        if (w > 0) text.push_back(' ');
        const auto len = config.min_word_length +
                         static_cast<int>(rng.below(config.max_word_length - config.min_word_length + 1));
        for (int i = 0; i < len; ++i) text.push_back(letters[rng.below(letters.size())]);
    }
    return text;
}

Waveform render_text(const Transcript& text, const SynthConfig& config, Rng& rng) {
    const Alphabet alphabet(config.alphabet);
    const int rate = config.sample_rate;
    const auto symbol_len = static_cast<Eigen::Index>(std::lround(config.symbol_seconds * rate));
    const auto gap_len = static_cast<Eigen::Index>(std::lround(config.gap_seconds * rate));
    const auto lead_len = static_cast<Eigen::Index>(std::lround(config.lead_seconds * rate));
    const auto tail_len = static_cast<Eigen::Index>(std::lround(config.tail_seconds * rate));
    const auto n = static_cast<Eigen::Index>(text.size());
    const Eigen::Index total = lead_len + tail_len + n * symbol_len + std::max<Eigen::Index>(n - 1, 0) * gap_len;

    Vector clean = Vector::Zero(total);
    const double gain = rng.uniform(config.min_gain, config.max_gain);
    const double jitter1 = 1.0 + config.frequency_jitter * rng.uniform(-1.0, 1.0);
    const double jitter2 = 1.0 + config.frequency_jitter * rng.uniform(-1.0, 1.0);
    const auto ramp = static_cast<Eigen::Index>(0.005 * rate);

    for (Eigen::Index s = 0; s < n; ++s) {
        const auto f = symbol_formants(alphabet.index(text[static_cast<std::size_t>(s)]) - 1);
        const double a1 = gain * 0.6 * rng.uniform(0.9, 1.1);
        const double a2 = gain * 0.4 * rng.uniform(0.9, 1.1);
        const double ph1 = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double ph2 = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const Eigen::Index start = lead_len + s * (symbol_len + gap_len);
        for (Eigen::Index i = 0; i < symbol_len; ++i) {
            const double t = static_cast<double>(i) / rate;
            double env = 1.0;
            if (i < ramp) env = static_cast<double>(i) / ramp;
            if (symbol_len - 1 - i < ramp) env = std::min(env, static_cast<double>(symbol_len - 1 - i) / ramp);
            clean[start + i] = env * (a1 * std::sin(2.0 * std::numbers::pi * f.f1 * jitter1 * t + ph1) +
                                      a2 * std::sin(2.0 * std::numbers::pi * f.f2 * jitter2 * t + ph2));
        }
    }

    double rms = n > 0 ? std::sqrt(clean.squaredNorm() / static_cast<double>(total)) : gain * 0.3;
    const double noise_std = rms * std::pow(10.0, -config.snr_db / 20.0);
    Vector noisy = clean;
    for (Eigen::Index i = 0; i < total; ++i) noisy[i] += noise_std * rng.normal();
    return Waveform(noisy.cwiseMax(-1.0).cwiseMin(1.0), rate);
}

std::vector<Utterance> synthesize_corpus(const SynthConfig& config, int count, std::uint64_t seed,
                                         const std::vector<Transcript>& avoid) {
    if (count < 0) throw std::invalid_argument("synthesize_corpus: negative count");
    std::vector<Utterance> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)), 2);
        Transcript text = random_text(config, rng);
        while (std::find(avoid.begin(), avoid.end(), text) != avoid.end()) text = random_text(config, rng);
        char id[16];
        std::snprintf(id, sizeof id, "utt%04d", i);
        out.push_back({id, render_text(text, config, rng), text});
    }
    return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_manifest: cannot open " + path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (header) {
            header = false;
            if (line.rfind("wav_path", 0) == 0) continue;
        }
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw FormatError("read_manifest: malformed line '" + line + "'");
        std::filesystem::path wav = line.substr(0, comma);
        if (wav.is_relative()) wav = path.parent_path() / wav;
        entries.push_back({wav, line.substr(comma + 1)});
    }
    return entries;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("write_manifest: cannot open " + path.string());
    out << "wav_path,transcript\n";
    for (const auto& e : entries) {
        if (e.transcript.find_first_of(",\n") != std::string::npos)
            throw std::invalid_argument("write_manifest: transcript contains a separator");
        out << e.wav_path.generic_string() << ',' << e.transcript << '\n';
    }
}

}  // namespace dropdef
