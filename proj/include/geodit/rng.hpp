#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace geodit {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t z)
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed) { return mix64(seed); }

template <typename... Rest>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t next, Rest... rest)
{
    return derive_seed(mix64(seed) ^ mix64(next + 0x632be59bd9b4e019ULL), static_cast<std::uint64_t>(rest)...);
}

/// FNV-1a, for turning names into stream ids.
constexpr std::uint64_t hash_name(std::string_view s)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seeded random source. Every draw goes through the standard distributions
/// on a 64-bit Mersenne twister, so streams are reproducible for a given
/// standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return normal_(engine_); }
    double normal(double mean, double stddev) { return mean + stddev * normal_(engine_); }
    /// Uniform integer in the closed range [lo, hi].
    int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
    int poisson(double mean)
    {
        if (mean <= 0.0) return 0;
        return std::poisson_distribution<int>(mean)(engine_);
    }
    bool bernoulli(double p) { return uniform() < p; }

    std::mt19937_64 &engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace geodit
