#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace lungseg {

// Deterministic random generator (splitmix64 core). The standard library
// distributions are implementation-defined, so everything that must be
// reproducible bit-for-bit across toolchains is hand-rolled here.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller. No caching of the second deviate so a
    // call sequence depends only on the call count.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Uniform integer in [0, n).
    int64_t uniform_int(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

    // Derives an independent stream seed, e.g. mix(global_seed, sample_index).
    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t z = a ^ (b * 0x9E3779B97F4A7C15ULL + 0x7F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

private:
    uint64_t state_;
};

// Fisher-Yates shuffle driven by Rng (std::shuffle is not portable-stable).
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
        const int64_t j = rng.uniform_int(i + 1);
        std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
}

}  // namespace lungseg
