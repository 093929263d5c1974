#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace mlpsr {

// Deterministic random source. Gaussian draws use a hand-rolled Box-Muller so
// the stream does not depend on the standard library's distribution
// implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0,1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // Uniform in [lo,hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller, one value per call (no caching so the
    // stream is a pure function of the draw count).
    double normal() {
        double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;  // (0,1]
        double u2 = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Decorrelated child seed for a labelled sub-stream (per-epoch shuffles,
    // parameter init, ...). FNV-1a over the label mixed with the base seed.
    static std::uint64_t derive(std::uint64_t base, const std::string& label, std::uint64_t index) {
        std::uint64_t h = 1469598103934665603ull;
        auto mix = [&h](std::uint64_t v) {
            for (int i = 0; i < 8; ++i) {
                h ^= (v >> (8 * i)) & 0xff;
                h *= 1099511628211ull;
            }
        };
        mix(base);
        for (char c : label) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        mix(index);
        return h;
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace mlpsr
