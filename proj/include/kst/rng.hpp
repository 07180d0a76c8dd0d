#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace kst {

// Portable deterministic PRNG: splitmix64 (Steele, Lea, Flood 2014).
// The exact update is pinned here so datasets, initializations and shuffles
// are bit-identical across platforms and standard libraries. Gaussian-like
// noise uses an Irwin-Hall(12) sum instead of Box-Muller: additions only,
// no libm calls whose last bits could differ between systems.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97f4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n). n must be >= 1.
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    // Approximately standard normal: sum of 12 uniforms minus 6.
    double next_gaussian() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += next_double();
        return s - 6.0;
    }

    // Derive an independent stream; used for per-run seeds in repeated trials.
    static uint64_t derive(uint64_t seed, uint64_t stream) {
        Rng r(seed ^ (0xA0761D6478BD642FULL * (stream + 1)));
        return r.next_u64();
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
};

} // namespace kst
