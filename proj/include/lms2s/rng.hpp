#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace lms2s {

// Deterministic 64-bit generator (splitmix64). All randomness in the project
// flows through this class so that a run is reproducible bit-for-bit from one
// seed, independent of platform or standard-library version. Gaussian draws
// use Box-Muller on our own uniforms for the same reason.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Independent child stream k. Derivation is a fixed hash of (seed, k), so
    // phases can be rerun in isolation and still see the same draws.
    Rng derive(std::uint64_t k) const {
        Rng mixer(state_ ^ (0xD1B54A32D192ED03ULL * (k + 1)));
        mixer.next_u64();
        return Rng(mixer.state_);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace lms2s
