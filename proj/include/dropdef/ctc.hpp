#ifndef DROPDEF_CTC_HPP
#define DROPDEF_CTC_HPP

#include "dropdef/types.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dropdef {

/// Transcripts are plain strings over an Alphabet (blanks and repeats
/// already collapsed).
using Transcript = std::string;

/// Ordered character set. Class 0 is the CTC blank; symbol i maps to class i + 1.
class Alphabet {
public:
    static constexpr int blank = 0;

    Alphabet() = default;
    explicit Alphabet(std::string symbols);

    [[nodiscard]] int size() const { return static_cast<int>(symbols_.size()); }
    [[nodiscard]] int classes() const { return size() + 1; }
    [[nodiscard]] const std::string& symbols() const { return symbols_; }

    [[nodiscard]] int index(char c) const;  // throws std::invalid_argument
    [[nodiscard]] char symbol(int cls) const;
    [[nodiscard]] bool contains(std::string_view text) const;
    [[nodiscard]] std::vector<int> encode(std::string_view text) const;

    friend bool operator==(const Alphabet&, const Alphabet&) = default;

private:
    std::string symbols_;
};

/// Per-frame log-probabilities over alphabet + blank (T x classes).
struct CtcPosteriors {
    Matrix log_probs;

    [[nodiscard]] Eigen::Index frames() const { return log_probs.rows(); }
    [[nodiscard]] Eigen::Index classes() const { return log_probs.cols(); }
    [[nodiscard]] Matrix probs() const { return log_probs.array().exp().matrix(); }
};

/// Row-wise log-softmax of pre-softmax activations.
CtcPosteriors log_softmax(const Matrix& logits);

/// The target cannot be aligned to the available frames (needs at least
/// len + repeats frames); its loss would be +inf.
struct InfeasibleTarget : std::domain_error {
    InfeasibleTarget(Eigen::Index frames_, Eigen::Index required_)
        : std::domain_error("ctc_loss: target needs " + std::to_string(required_) +
                            " frames, only " + std::to_string(frames_) + " available (loss = +inf)"),
          frames(frames_),
          required(required_) {}
    Eigen::Index frames;
    Eigen::Index required;
};

struct CtcResult {
    double loss = 0.0;
    Matrix grad_logits;  // d loss / d pre-softmax activations, T x classes
};

/// Minimum frame count a label sequence needs.
Eigen::Index ctc_min_frames(std::span<const int> labels);

/// Negative log-likelihood via log-space forward-backward, with exact
/// gradient w.r.t. the logits that produced `posteriors`.
CtcResult ctc_loss(const CtcPosteriors& posteriors, std::span<const int> labels);

inline CtcResult ctc_loss(const CtcPosteriors& posteriors, const Alphabet& alphabet,
                          std::string_view target) {
    const auto labels = alphabet.encode(target);
    return ctc_loss(posteriors, labels);
}

/// Collapses a framewise class path: drop repeats, then blanks.
std::vector<int> collapse_path(std::span<const int> path);

/// Per-frame argmax (lowest class on ties), then collapse.
Transcript greedy_decode(const CtcPosteriors& posteriors, const Alphabet& alphabet);

}  // namespace dropdef

#endif
