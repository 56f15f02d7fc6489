#include "dropdef/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dropdef {

std::string_view to_string(FeatureMode mode) {
    return mode == FeatureMode::character ? "char" : "prob";
}

FeatureMode parse_feature_mode(std::string_view s) {
    if (s == "char") return FeatureMode::character;
    if (s == "prob") return FeatureMode::probability;
    throw std::invalid_argument("unknown feature mode '" + std::string(s) + "' (expected char or prob)");
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
    if (a.size() < b.size()) std::swap(a, b);
    std::vector<std::size_t> row(b.size() + 1);
    std::iota(row.begin(), row.end(), std::size_t{0});
    for (std::size_t i = 1; i <= a.size(); ++i) {
        std::size_t diag = row[0];
        row[0] = i;
        for (std::size_t j = 1; j <= b.size(); ++j) {
            const std::size_t up = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
            diag = up;
        }
    }
    return row[b.size()];
}

std::size_t medoid(const std::vector<Transcript>& transcripts) {
    return medoid(transcripts, [](const Transcript& a, const Transcript& b) { return levenshtein(a, b); });
}

DistanceDistribution char_distribution(const std::vector<Transcript>& transcripts) {
    DistanceDistribution out;
    out.mode = FeatureMode::character;
    const std::size_t ref = medoid(transcripts);
    out.medoid_index = ref;
    out.medoid = transcripts[ref];
    for (const auto& t : transcripts) {
        const std::size_t d = levenshtein(out.medoid, t);
        out.distances.push_back(static_cast<double>(d));
        ++out.histogram[std::min<std::size_t>(d, histogram_bins - 1)];
    }
    return out;
}

DistanceDistribution prob_distribution(const std::vector<CtcPosteriors>& realizations) {
    if (realizations.empty()) throw std::invalid_argument("prob_distribution: empty set");
    const Eigen::Index t = realizations.front().frames();
    const Eigen::Index c = realizations.front().classes();
    if (t == 0) throw ShapeError("prob_distribution: zero-frame posteriors");
    std::vector<Matrix> probs;
    probs.reserve(realizations.size());
    for (const auto& r : realizations) {
        if (r.frames() != t || r.classes() != c) throw ShapeError("prob_distribution: realizations differ in shape");
        probs.push_back(r.probs());
    }
    DistanceDistribution out;
    out.mode = FeatureMode::probability;
    out.mean = Matrix::Zero(t, c);
    for (const auto& p : probs) out.mean += p;
    out.mean /= static_cast<double>(probs.size());
    for (const auto& p : probs) out.distances.push_back((p - out.mean).squaredNorm() / static_cast<double>(t));
    return out;
}

FeatureVector moments(const DistanceDistribution& dist, MomentKind kind) {
    const auto n = static_cast<double>(dist.distances.size());
    if (dist.distances.empty()) throw std::invalid_argument("moments: empty distribution");
    FeatureVector f;
    double m1 = 0.0;
    for (double d : dist.distances) m1 += d;
    m1 /= n;
    const double centre = kind == MomentKind::central ? m1 : 0.0;
    for (double d : dist.distances) {
        const double x = d - centre;
        f.m[1] += x * x;
        f.m[2] += x * x * x;
        f.m[3] += x * x * x * x;
        f.u2 += d * d;
    }
    f.m[0] = m1;
    for (int k = 1; k < 4; ++k) f.m[k] /= n;
    // Probability-mode distances are squared norms already, so their mean is
    // the mean squared distance (covariance trace / T).
    f.u2 = dist.mode == FeatureMode::probability ? m1 : f.u2 / n;
    if (dist.mode == FeatureMode::character) {
        f.entropy = entropy(dist);
        std::array<double, histogram_bins> h{};
        for (int z = 0; z < histogram_bins; ++z) h[z] = dist.histogram[z] / n;
        f.histogram = h;
    }
    return f;
}

double entropy(const DistanceDistribution& dist) {
    if (dist.mode != FeatureMode::character) throw std::invalid_argument("entropy: needs a character-mode distribution");
    const double n = std::accumulate(dist.histogram.begin(), dist.histogram.end(), 0.0);
    if (n == 0.0) return 0.0;
    double h = 0.0;
    for (int c : dist.histogram)
        if (c > 0) h -= (c / n) * std::log(c / n);
    return h;
}

}  // namespace dropdef
