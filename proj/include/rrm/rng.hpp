#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace rrm {

// SplitMix64 (Steele, Lea, Flood 2014) with fixed constants. All derived
// distributions below are written out here so that seeded output is identical
// on every platform and standard library.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n) by rejection; n > 0.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    // Box-Muller; one variate per call (the pair's sibling is discarded).
    double normal(double mean = 0.0, double sd = 1.0) {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return mean + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Knuth multiplication method; intended for small lambda.
    std::uint32_t poisson(double lambda) {
        if (lambda <= 0.0) return 0;
        const double limit = std::exp(-lambda);
        std::uint32_t k = 0;
        double p = uniform();
        while (p > limit) {
            ++k;
            p *= uniform();
        }
        return k;
    }

    double exponential(double mean) {
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return -mean * std::log(u);
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::uint64_t state_;
};

// Derive an independent stream seed from a base seed and a salt.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    Rng r(seed ^ (salt * 0xD1B54A32D192ED03ULL));
    r.next_u64();
    return r.next_u64();
}

} // namespace rrm
