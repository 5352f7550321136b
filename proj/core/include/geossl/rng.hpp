#pragma once

#include <cmath>
#include <cstdint>

namespace geossl {

/// Deterministic 64-bit RNG (xoshiro256++ seeded via splitmix64) with
/// explicit uniform/normal transforms so streams are reproducible across
/// standard library implementations. Cheap to copy; derive independent
/// streams with fork().
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) {
        std::uint64_t x = seed;
        for (auto& word : s_) word = splitmix64(x);
    }

    std::uint64_t next() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::int64_t below(std::int64_t n) {
        return static_cast<std::int64_t>(next() % static_cast<std::uint64_t>(n));
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (stateless pair draw).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Independent child stream identified by a tag.
    Rng fork(std::uint64_t tag) {
        std::uint64_t x = next() ^ (0x9e3779b97f4a7c15ULL * (tag + 1));
        Rng child(0);
        for (auto& word : child.s_) word = splitmix64(x);
        return child;
    }

    /// Stream derived from (seed, tags...) without consuming this stream.
    static Rng derive(std::uint64_t seed, std::uint64_t tag_a, std::uint64_t tag_b = 0,
                      std::uint64_t tag_c = 0) {
        std::uint64_t x = seed;
        x = splitmix64(x) ^ (tag_a * 0xbf58476d1ce4e5b9ULL + 1);
        x = splitmix64(x) ^ (tag_b * 0x94d049bb133111ebULL + 1);
        x = splitmix64(x) ^ (tag_c * 0x9e3779b97f4a7c15ULL + 1);
        return Rng(x);
    }

private:
    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    std::uint64_t s_[4];
};

}  // namespace geossl
