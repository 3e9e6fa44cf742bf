#pragma once

// Deterministic randomness. std::mt19937_64 has a standard-mandated output
// sequence; the distributions below are written out by hand because the
// standard library distributions differ between implementations.

#include <cstdint>
#include <random>
#include <string_view>

namespace lrmtrace {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Folds any number of integers / strings into one 64-bit seed.
class SeedMixer {
public:
    explicit SeedMixer(std::uint64_t base) : state_(splitmix64(base)) {}

    SeedMixer& add(std::uint64_t v) {
        state_ = splitmix64(state_ ^ splitmix64(v));
        return *this;
    }
    SeedMixer& add(std::string_view s) { return add(fnv1a(s)); }

    std::uint64_t value() const { return state_; }

private:
    std::uint64_t state_;
};

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform integer in [lo, hi] (inclusive), unbiased via rejection.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (hi <= lo) return lo;
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % span);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return lo + static_cast<std::int64_t>(x % span);
    }

    /// Uniform double in [0, 1).
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) { return uniform01() < p; }

private:
    std::mt19937_64 engine_;
};

} // namespace lrmtrace
