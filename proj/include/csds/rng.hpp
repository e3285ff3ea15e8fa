#pragma once

#include <cmath>
#include <cstdint>

namespace csds {

/// Deterministic counter-free PRNG (splitmix64 core). The standard library
/// distributions are implementation-defined, so all sampling goes through
/// this class to keep runs bit-identical across compilers.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform float in [0, 1).
    float uniform() {
        return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
    }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    bool coin() { return (next_u64() & 1u) != 0; }

    /// Standard normal via Box-Muller; the second value is cached so the
    /// call sequence stays deterministic.
    float normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        float u1 = uniform();
        float u2 = uniform();
        if (u1 < 1e-12f) u1 = 1e-12f;
        float r = std::sqrt(-2.0f * std::log(u1));
        float a = 6.28318530717958647692f * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    /// Independent stream keyed by (original seed, index).
    Rng split(std::uint64_t index) const {
        std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ull * (index + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return Rng(z ^ (z >> 31));
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t state_;
    bool has_cached_ = false;
    float cached_ = 0.0f;
};

} // namespace csds
