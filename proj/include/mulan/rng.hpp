#pragma once

#include <cmath>
#include <cstdint>

namespace mulan {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// PCG32 with an explicit stream id. One stream per (seed, purpose, index)
// keeps batch-parallel work order-independent and makes training resumable:
// every consumer derives its stream from counters, never from shared state.
class Rng {
  public:
    Rng() : Rng(0, 0) {}

    Rng(uint64_t seed, uint64_t stream) {
        state_ = 0;
        inc_ = (splitmix64(stream) << 1u) | 1u;
        next_u32();
        state_ += splitmix64(seed);
        next_u32();
    }

    static Rng keyed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
        uint64_t s = splitmix64(a ^ splitmix64(b ^ splitmix64(c)));
        return Rng(seed, s);
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
    }

    // uniform in [0, 1) with 53 random bits
    double uniform() {
        uint64_t hi = next_u32();
        uint64_t lo = next_u32();
        uint64_t bits = ((hi << 32) | lo) >> 11;
        return static_cast<double>(bits) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    uint64_t below(uint64_t n) { return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n; }

    // Box-Muller, no pair cache (two uniforms per variate keeps streams stateless)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double rademacher() { return uniform() < 0.5 ? -1.0 : 1.0; }

    // Marsaglia-Tsang squeeze method, with the standard boost for shape < 1.
    double gamma(double shape, double scale) {
        if (shape < 1.0) {
            double u = uniform();
            if (u < 0x1.0p-53) u = 0x1.0p-53;
            return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / (3.0 * std::sqrt(d));
        for (;;) {
            double x = normal();
            double t = 1.0 + c * x;
            if (t <= 0.0) continue;
            double v = t * t * t;
            double u = uniform();
            double x2 = x * x;
            if (u < 1.0 - 0.0331 * x2 * x2) return d * v * scale;
            if (u < 0x1.0p-53) u = 0x1.0p-53;
            if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v * scale;
        }
    }

  private:
    uint64_t state_ = 0;
    uint64_t inc_ = 1;
};

}  // namespace mulan
