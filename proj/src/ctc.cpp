#include "dropdef/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dropdef {

namespace {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
    if (a == neg_inf) return b;
    if (b == neg_inf) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

Alphabet::Alphabet(std::string symbols) : symbols_(std::move(symbols)) {
    for (std::size_t i = 0; i < symbols_.size(); ++i)
        if (symbols_.find(symbols_[i], i + 1) != std::string::npos)
            throw std::invalid_argument("Alphabet: duplicate symbol '" + std::string(1, symbols_[i]) + "'");
}

int Alphabet::index(char c) const {
    const auto pos = symbols_.find(c);
    if (pos == std::string::npos)
        throw std::invalid_argument("Alphabet: symbol '" + std::string(1, c) + "' not in alphabet");
    return static_cast<int>(pos) + 1;
}

char Alphabet::symbol(int cls) const {
    if (cls < 1 || cls > size()) throw std::out_of_range("Alphabet: class has no symbol");
    return symbols_[static_cast<std::size_t>(cls - 1)];
}

bool Alphabet::contains(std::string_view text) const {
    return std::all_of(text.begin(), text.end(),
                       [&](char c) { return symbols_.find(c) != std::string::npos; });
}

std::vector<int> Alphabet::encode(std::string_view text) const {
    std::vector<int> out;
    out.reserve(text.size());
    for (char c : text) out.push_back(index(c));
    return out;
}

CtcPosteriors log_softmax(const Matrix& logits) {
    CtcPosteriors out;
    const Vector row_max = logits.rowwise().maxCoeff();
    Matrix shifted = logits.colwise() - row_max;
    const Vector lse = shifted.array().exp().rowwise().sum().log().matrix();
    out.log_probs = shifted.colwise() - lse;
    return out;
}

Eigen::Index ctc_min_frames(std::span<const int> labels) {
    Eigen::Index required = static_cast<Eigen::Index>(labels.size());
    for (std::size_t i = 1; i < labels.size(); ++i)
        if (labels[i] == labels[i - 1]) ++required;
    return required;
}

CtcResult ctc_loss(const CtcPosteriors& posteriors, std::span<const int> labels) {
    const Matrix& lp = posteriors.log_probs;
    const Eigen::Index frames = lp.rows();
    const Eigen::Index classes = lp.cols();
    if (frames == 0) throw ShapeError("ctc_loss: no frames");
    for (int l : labels)
        if (l <= Alphabet::blank || l >= classes) throw std::invalid_argument("ctc_loss: label out of range");
    const Eigen::Index required = ctc_min_frames(labels);
    if (required > frames) throw InfeasibleTarget(frames, required);

    // Extended label sequence: blank, l1, blank, l2, ..., blank.
    const Eigen::Index states = 2 * static_cast<Eigen::Index>(labels.size()) + 1;
    std::vector<int> ext(static_cast<std::size_t>(states), Alphabet::blank);
    for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];
    auto can_skip = [&](Eigen::Index s) {  // transition s-2 -> s allowed
        return s >= 2 && ext[s] != Alphabet::blank && ext[s] != ext[s - 2];
    };

    Matrix alpha = Matrix::Constant(frames, states, neg_inf);
    alpha(0, 0) = lp(0, ext[0]);
    if (states > 1) alpha(0, 1) = lp(0, ext[1]);
    for (Eigen::Index t = 1; t < frames; ++t) {
        for (Eigen::Index s = 0; s < states; ++s) {
            double a = alpha(t - 1, s);
            if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
            if (can_skip(s)) a = log_add(a, alpha(t - 1, s - 2));
            if (a != neg_inf) alpha(t, s) = a + lp(t, ext[s]);
        }
    }

    Matrix beta = Matrix::Constant(frames, states, neg_inf);
    beta(frames - 1, states - 1) = lp(frames - 1, ext[states - 1]);
    if (states > 1) beta(frames - 1, states - 2) = lp(frames - 1, ext[states - 2]);
    for (Eigen::Index t = frames - 2; t >= 0; --t) {
        for (Eigen::Index s = 0; s < states; ++s) {
            double b = beta(t + 1, s);
            if (s + 1 < states) b = log_add(b, beta(t + 1, s + 1));
            if (s + 2 < states && can_skip(s + 2)) b = log_add(b, beta(t + 1, s + 2));
            if (b != neg_inf) beta(t, s) = b + lp(t, ext[s]);
        }
    }

    double log_likelihood = alpha(frames - 1, states - 1);
    if (states > 1) log_likelihood = log_add(log_likelihood, alpha(frames - 1, states - 2));
    if (log_likelihood == neg_inf) throw InfeasibleTarget(frames, required);

    CtcResult result;
    result.loss = -log_likelihood;
    // d loss / d logit_k = y_k - (1/Z) sum_{s: ext[s]=k} alpha beta / y_k
    result.grad_logits = posteriors.probs();
    for (Eigen::Index t = 0; t < frames; ++t) {
        for (Eigen::Index s = 0; s < states; ++s) {
            const double log_occ = alpha(t, s) + beta(t, s) - lp(t, ext[s]) - log_likelihood;
            if (std::isfinite(log_occ)) result.grad_logits(t, ext[s]) -= std::exp(log_occ);
        }
    }
    return result;
}

std::vector<int> collapse_path(std::span<const int> path) {
    std::vector<int> out;
    int prev = -1;
    for (int c : path) {
        if (c != prev && c != Alphabet::blank) out.push_back(c);
        prev = c;
    }
    return out;
}

Transcript greedy_decode(const CtcPosteriors& posteriors, const Alphabet& alphabet) {
    std::vector<int> path(static_cast<std::size_t>(posteriors.frames()));
    for (Eigen::Index t = 0; t < posteriors.frames(); ++t) {
        Eigen::Index best = 0;
        posteriors.log_probs.row(t).maxCoeff(&best);
        path[static_cast<std::size_t>(t)] = static_cast<int>(best);
    }
    Transcript text;
    for (int c : collapse_path(path)) text.push_back(alphabet.symbol(c));
    return text;
}

}  // namespace dropdef
