#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace fastlr {

/// Seeded RNG with hand-rolled distributions so sampled streams depend only
/// on the mt19937_64 sequence, not on the standard library's distribution
/// implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform() {  // [0, 1)
        return double(gen_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive on both ends.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + std::int64_t(gen_() % std::uint64_t(hi - lo + 1));
    }

    double gauss() {
        // Box-Muller; draws two uniforms per call, no caching.
        double u1 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

}  // namespace fastlr
