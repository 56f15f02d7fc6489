#ifndef DROPDEF_TESTS_ORACLES_HPP
#define DROPDEF_TESTS_ORACLES_HPP

// Reference implementations written independently of the library.

#include "dropdef/ctc.hpp"
#include "dropdef/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace dropdef::testing {

inline Matrix random_logits(Eigen::Index frames, Eigen::Index classes, Rng& rng, double scale = 1.5) {
    Matrix m(frames, classes);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

// Walk the path, emit a label when it differs from the previous frame and is not blank.
inline std::vector<int> collapse_oracle(const std::vector<int>& path) {
    std::vector<int> out;
    int prev = -1;
    for (int c : path) {
        if (c != prev && c != 0) out.push_back(c);
        prev = c;
    }
    return out;
}

// -log of the summed probability of every frame path that collapses to `labels`.
inline double brute_force_ctc(const Matrix& probs, const std::vector<int>& labels) {
    const auto frames = probs.rows(), classes = probs.cols();
    std::vector<int> path(static_cast<std::size_t>(frames), 0);
    double total = 0.0;
    while (true) {
        if (collapse_oracle(path) == labels) {
            double p = 1.0;
            for (Eigen::Index t = 0; t < frames; ++t) p *= probs(t, path[static_cast<std::size_t>(t)]);
            total += p;
        }
        Eigen::Index t = 0;
        while (t < frames && ++path[static_cast<std::size_t>(t)] == classes) path[static_cast<std::size_t>(t++)] = 0;
        if (t == frames) break;
    }
    return -std::log(total);
}

// Textbook recursion with memoisation.
inline std::size_t levenshtein_oracle(const std::string& a, const std::string& b) {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
    std::function<std::size_t(std::size_t, std::size_t)> d = [&](std::size_t i, std::size_t j) -> std::size_t {
        if (i == 0) return j;
        if (j == 0) return i;
        if (auto it = memo.find({i, j}); it != memo.end()) return it->second;
        const std::size_t sub = d(i - 1, j - 1) + (a[i - 1] == b[j - 1] ? 0 : 1);
        const std::size_t r = std::min({d(i - 1, j) + 1, d(i, j - 1) + 1, sub});
        memo[{i, j}] = r;
        return r;
    };
    return d(a.size(), b.size());
}

// Index of the first element with the least summed oracle distance.
inline std::size_t exhaustive_medoid(const std::vector<std::string>& set) {
    std::vector<std::size_t> sums(set.size(), 0);
    for (std::size_t i = 0; i < set.size(); ++i)
        for (const auto& t : set) sums[i] += levenshtein_oracle(set[i], t);
    return static_cast<std::size_t>(std::min_element(sums.begin(), sums.end()) - sums.begin());
}

inline std::string random_string(Rng& rng, std::size_t max_len, const std::string& symbols = "abc") {
    const std::size_t len = rng.below(max_len + 1);
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s += symbols[rng.below(symbols.size())];
    return s;
}

inline std::vector<CtcPosteriors> random_realizations(Rng& rng, int count, Eigen::Index frames, Eigen::Index classes) {
    std::vector<CtcPosteriors> out;
    for (int i = 0; i < count; ++i) out.push_back(log_softmax(random_logits(frames, classes, rng, 2.0)));
    return out;
}

// Trace of the biased empirical covariance of the flattened probability matrices.
inline double covariance_trace(const std::vector<CtcPosteriors>& set) {
    const auto n = static_cast<double>(set.size());
    const Eigen::Index size = set.front().log_probs.size();
    double trace = 0.0;
    for (Eigen::Index k = 0; k < size; ++k) {
        double s = 0.0, s2 = 0.0;
        for (const auto& p : set) {
            const double v = std::exp(p.log_probs.data()[k]);
            s += v;
            s2 += v * v;
        }
        trace += s2 / n - (s / n) * (s / n);
    }
    return trace;
}

}  // namespace dropdef::testing

#endif
