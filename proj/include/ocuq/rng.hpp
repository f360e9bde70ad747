#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ocuq {

/// SplitMix64 finalizer. Used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Folds a list of integers into one seed: h = mix64(h ^ mix64(k)) per key,
/// starting from h = 0x9E3779B97F4A7C15.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) noexcept;

/// Seeded generator used everywhere randomness appears.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Distributions are implemented here rather than taken from
/// <random> because the standard leaves their algorithms unspecified:
///   uniform()      (x >> 11) * 2^-53, in [0, 1)
///   uniform_int(n) rejection sampling on the top bits, in [0, n)
///   normal()       Box-Muller on (1 - u1, u2), caching the second variate
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::uint64_t uniform_int(std::uint64_t n);
    double normal();
    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace ocuq
