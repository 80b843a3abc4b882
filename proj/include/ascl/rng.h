#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace ascl {

// SplitMix64 finalizer; used to derive independent stream seeds from a global
// seed plus stream coordinates (epoch, pair id, purpose, ...).
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> coords) noexcept {
    std::uint64_t s = mix_seed(seed);
    for (std::uint64_t c : coords) s = mix_seed(s ^ mix_seed(c + 0x632be59bd9b4e019ULL));
    return s;
}

// mt19937_64 with the libstdc++ distributions; reproducible within one
// toolchain, not promised bit-exact across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    // Uniform integer in [lo, hi].
    std::size_t index(std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(engine_);
    }
    bool bernoulli(double p) { return uniform() < p; }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace ascl
