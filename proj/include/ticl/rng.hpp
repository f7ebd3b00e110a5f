#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace ticl {

// Deterministic RNG used everywhere. mt19937_64 is pinned by the standard, and
// all value transforms below are spelled out explicitly, so a given seed
// produces the same stream on every platform and compiler.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1), 53 usable bits.
    double next_unit() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n). n must be > 0.
    int64_t below(int64_t n) {
        return static_cast<int64_t>(gen_() % static_cast<uint64_t>(n));
    }

    /// Standard Box-Muller, no spare caching so draws stay position-independent.
    double normal(double mean = 0.0, double stddev = 1.0) {
        const double u1 = 1.0 - next_unit(); // (0, 1], keeps log finite
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            const int64_t j = below(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    /// Derive an independent stream from this RNG's seed; tag picks the purpose
    /// (init, shuffle per epoch, mixup, ...). Does not advance this stream.
    Rng fork(uint64_t tag) const {
        uint64_t x = seed_ + 0x9e3779b97f4a7c15ULL * (tag + 1);
        x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27; x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return Rng(x);
    }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
};

} // namespace ticl
