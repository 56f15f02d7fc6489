#ifndef DROPDEF_CORPUS_HPP
#define DROPDEF_CORPUS_HPP

#include "dropdef/ctc.hpp"
#include "dropdef/rng.hpp"

#include <filesystem>
#include <vector>

namespace dropdef {

/// Synthetic speech stand-in: every symbol is a two-formant tone of fixed
/// duration, separated by short gaps, in white noise.
struct SynthConfig {
    std::string alphabet = "acdeghklnopsu ";
    int sample_rate = 16000;
    double symbol_seconds = 0.08;
    double gap_seconds = 0.03;
    double lead_seconds = 0.12;
    double tail_seconds = 0.10;
    int min_words = 1;
    int max_words = 2;
    int min_word_length = 2;
    int max_word_length = 4;
    double min_gain = 0.3;
    double max_gain = 0.6;
    double snr_db = 30.0;
    double frequency_jitter = 0.015;  // relative, per utterance and formant
};

struct Utterance {
    std::string id;
    Waveform audio;
    Transcript text;
};

struct Formants {
    double f1;
    double f2;
};

/// Nominal formant pair of the symbol at `index` in the alphabet.
Formants symbol_formants(int index);

/// Duration bounds implied by the config (seconds).
std::pair<double, double> utterance_duration_bounds(const SynthConfig& config);

Transcript random_text(const SynthConfig& config, Rng& rng);

Waveform render_text(const Transcript& text, const SynthConfig& config, Rng& rng);

/// Utterance i depends only on (seed, i), so corpora of different sizes
/// share their common prefix. Ids are "utt0000", "utt0001", ...
std::vector<Utterance> synthesize_corpus(const SynthConfig& config, int count, std::uint64_t seed,
                                         const std::vector<Transcript>& avoid = {});

struct ManifestEntry {
    std::filesystem::path wav_path;
    Transcript transcript;
};

/// CSV `wav_path,transcript`; relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

}  // namespace dropdef

#endif
