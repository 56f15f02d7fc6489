#ifndef DROPDEF_UNCERTAINTY_HPP
#define DROPDEF_UNCERTAINTY_HPP

#include "dropdef/ctc.hpp"

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

namespace dropdef {

enum class FeatureMode { character, probability };

std::string_view to_string(FeatureMode mode);       // "char" / "prob"
FeatureMode parse_feature_mode(std::string_view s);  // throws std::invalid_argument

/// Histogram support 0..19; larger character distances land in the top bin.
inline constexpr int histogram_bins = 20;
using Histogram = std::array<int, histogram_bins>;

/// Unit-cost edit distance.
std::size_t levenshtein(std::string_view a, std::string_view b);

/// Index minimising the summed distance to all elements; lowest index wins ties.
template <class T, class Distance>
std::size_t medoid(const std::vector<T>& items, Distance&& distance) {
    if (items.empty()) throw std::invalid_argument("medoid: empty set");
    const std::size_t n = items.size();
    std::vector<double> sums(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = static_cast<double>(distance(items[i], items[j]));
            sums[i] += d;
            sums[j] += d;
        }
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (sums[i] < sums[best]) best = i;
    return best;
}

std::size_t medoid(const std::vector<Transcript>& transcripts);

struct DistanceDistribution {
    FeatureMode mode = FeatureMode::character;
    std::vector<double> distances;  // one per realization, reference included
    Histogram histogram{};          // character mode only
    std::optional<std::size_t> medoid_index;  // character mode
    Transcript medoid;                        // character mode
    Matrix mean;                              // probability mode, T x classes

    [[nodiscard]] int size() const { return static_cast<int>(distances.size()); }
};

/// Levenshtein distances of every transcript to the medoid.
DistanceDistribution char_distribution(const std::vector<Transcript>& transcripts);

/// Squared Frobenius distances of posterior probabilities to their mean, divided by T.
DistanceDistribution prob_distribution(const std::vector<CtcPosteriors>& realizations);

enum class MomentKind { raw, central };

struct FeatureVector {
    std::array<double, 4> m{};  // m1..m4
    double u2 = 0.0;            // mean squared distance: mean(d^2) for char, mean(d) for prob
    std::optional<double> entropy;
    std::optional<std::array<double, histogram_bins>> histogram;  // histogram / I

    [[nodiscard]] std::vector<double> moments4() const { return {m[0], m[1], m[2], m[3]}; }
};

/// m_k = mean(d^k) for raw moments, mean((d - m1)^k) for central ones (m1 kept raw).
FeatureVector moments(const DistanceDistribution& dist, MomentKind kind = MomentKind::raw);

/// Shannon entropy (nats) of the character histogram.
double entropy(const DistanceDistribution& dist);

}  // namespace dropdef

#endif
