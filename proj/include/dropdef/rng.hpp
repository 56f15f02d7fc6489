#ifndef DROPDEF_RNG_HPP
#define DROPDEF_RNG_HPP

#include <array>
#include <cstdint>

namespace dropdef {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
/// A block is a pure function of (key, counter), which is what makes dropout
/// masks reproducible per (seed, layer, frame, unit) without carrying state.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter block(Counter ctr, Key key) {
        for (int round = 0; round < 10; ++round) {
            ctr = single_round(ctr, key);
            key[0] += 0x9E3779B9u;
            key[1] += 0xBB67AE85u;
        }
        return ctr;
    }

    static Key key_from_seed(std::uint64_t seed) {
        return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    }

private:
    static Counter single_round(const Counter& c, const Key& k) {
        const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
        const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

/// Maps a 32-bit word to the open interval (0, 1).
inline double to_unit_open(std::uint32_t u) {
    return (static_cast<double>(u) + 0.5) * (1.0 / 4294967296.0);
}

/// Sequential stream on top of Philox: the counter walks forward, four
/// words per block. Portable across platforms (no std distributions).
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint32_t stream = 0)
        : key_(Philox4x32::key_from_seed(seed)), stream_(stream) {}

    std::uint32_t next_u32() {
        if (pos_ == 4) {
            buffer_ = Philox4x32::block(
                {static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
                 stream_, 0x5EED5EEDu},
                key_);
            ++counter_;
            pos_ = 0;
        }
        return buffer_[pos_++];
    }

    std::uint64_t next_u64() {
        const std::uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    /// Uniform in (0, 1) with 53 bits of resolution.
    double uniform() {
        const std::uint64_t bits = next_u64() >> 11;
        return (static_cast<double>(bits) + 0.5) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0, n). Rejection sampling keeps it unbiased.
    std::uint64_t below(std::uint64_t n);

    double normal();

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = below(i);
            std::swap(first[static_cast<std::ptrdiff_t>(i - 1)], first[static_cast<std::ptrdiff_t>(j)]);
        }
    }

private:
    Philox4x32::Key key_;
    std::uint32_t stream_;
    std::uint64_t counter_ = 0;
    Philox4x32::Counter buffer_{};
    int pos_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Mixes a seed with a small integer tag (SplitMix64 finalizer). Used to
/// derive per-iteration / per-epoch seeds that don't collide trivially.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace dropdef

#endif
