#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace intxlab {

// Mixes a 64-bit value into a well-distributed seed (splitmix64 finalizer).
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic random source. The engine is std::mt19937_64 (its output
// sequence is fixed by the standard); all transforms to doubles are done
// by hand so that streams are bit-identical across platforms and library
// versions. Every consumer takes an Rng& or owns a seeded instance; there
// is no global state.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1) with 53-bit resolution.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    // Standard normal via Box-Muller. No cached spare: two uniforms are
    // consumed per call so the stream position is a pure function of the
    // call count.
    double normal() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Uniform integer in [0, n), rejection-sampled so the result is unbiased
    // and reproducible.
    int uniform_int(int n) {
        const auto un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return static_cast<int>(x % un);
    }

    bool bernoulli(double p) { return uniform01() < p; }

private:
    std::mt19937_64 engine_;
};

// Seed for repetition `rep` of a run with master seed `master`.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream,
                                 std::uint64_t rep = 0) {
    return mix64(mix64(master ^ mix64(stream)) ^ mix64(rep + 1));
}

}  // namespace intxlab
