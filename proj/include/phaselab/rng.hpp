#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace phaselab {

// Counter-based SplitMix64 stream: the i-th draw is mix64(key + i * golden_gamma).
// Output depends only on (key, counter), so streams are reproducible on any
// platform and cheap to fork by deriving a new key.
class CounterRng {
public:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    explicit CounterRng(std::uint64_t key = 0) : key_(key) {}

    static constexpr std::uint64_t mix64(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGamma); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Lemire-style rejection keeps it unbiased.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    // Box-Muller; consumes exactly two draws per call.
    double normal() {
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t key() const { return key_; }
    std::uint64_t counter() const { return counter_; }

    // Independent child stream; does not advance this one.
    CounterRng fork(std::uint64_t tag) const { return CounterRng(mix64(key_ ^ mix64(tag + kGamma))); }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace phaselab
